"""
JSON document builders for run outputs.

Each builder returns plain dicts ready for json.dumps. The run document holds
only deterministic content (identical for identical config and seed); wall
time and output paths go into the manifest that wraps it.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import TYPE_CHECKING, Any

from app.config import RunConfig, config_hash

if TYPE_CHECKING:
    from app.coupled import SurfaceGrid
    from app.ris import EstimateStats, LevelRecord, RunResult


def _num(v: float | None) -> float | None:
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def level_document(level: "LevelRecord") -> dict[str, Any]:
    st = level.stage
    return {
        "level": level.index,
        "threshold": _num(st.threshold),
        "smoothing": _num(st.smoothing),
        "pdf_scale": _num(st.pdf_scale),
        "lsf_scale": _num(st.lsf_scale),
        "probability": level.probability,
        "ratio": level.ratio,
        "calls": level.calls,
        "step_size": _num(level.step_size),
        "accept_rate": _num(level.accept_rate),
    }


def run_document(result: "RunResult") -> dict[str, Any]:
    return {
        "method": result.method,
        "estimate": result.estimate,
        "calls": result.calls,
        "levels": [level_document(lv) for lv in result.levels],
        "curve": [[_num(a), _num(p)] for a, p in result.curve],
    }


def _header(command: str, config: RunConfig) -> dict[str, Any]:
    return {
        "command": command,
        "method": config.method,
        "problem": config.problem,
        "seed": config.seed,
        "config_hash": config_hash(config),
        "reps": config.reps,
    }


def estimate_document(config: RunConfig, results: list["RunResult"], stats: "EstimateStats | None" = None) -> dict[str, Any]:
    doc = _header("estimate", config)
    if stats is not None:
        doc.update(estimate=stats.mean, cov=_num(stats.cov), mean_calls=stats.mean_calls,
                   calls=int(sum(stats.calls)), estimates=list(stats.estimates))
    else:
        only = results[0]
        doc.update(estimate=only.estimate, cov=None, mean_calls=float(only.calls),
                   calls=only.calls, estimates=[only.estimate])
    doc["replications"] = [run_document(r) for r in results]
    doc["config"] = config.model_dump(mode="json", exclude={"jobs"})
    return doc


def grid_document(grid: "SurfaceGrid") -> dict[str, Any]:
    return {
        "provenance": grid.provenance,
        "eps_axis": [float(v) for v in grid.eps_axis],
        "xi_axis": [float(v) for v in grid.xi_axis],
        "probabilities": [[_num(v) for v in row] for row in grid.probabilities()],
    }


def fragility_document(config: RunConfig, grid: "SurfaceGrid", thresholds: list[float]) -> dict[str, Any]:
    doc = _header("fragility", config)
    result = grid.as_run_result()
    doc.update(estimate=result.estimate, cov=None, mean_calls=float(grid.calls), calls=grid.calls,
               estimates=[result.estimate], thresholds=list(thresholds))
    doc["grid"] = grid_document(grid)
    doc["replications"] = [run_document(result)]
    doc["config"] = config.model_dump(mode="json", exclude={"jobs"})
    return doc


def failure_document(command: str, config: RunConfig) -> dict[str, Any]:
    """Header and config of a run that raised before producing an estimate."""
    doc = _header(command, config)
    doc["config"] = config.model_dump(mode="json", exclude={"jobs"})
    return doc


def manifest_document(document: dict[str, Any], wall_time_s: float, outputs: list[str]) -> dict[str, Any]:
    """Run document plus wall time and written files; loadable as a --config."""
    manifest = dict(document)
    manifest["wall_time_s"] = round(wall_time_s, 6)
    manifest["outputs"] = list(outputs)
    return manifest


def write_json(path: str | Path, document: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True))
    return path


def summary_text(document: dict[str, Any]) -> str:
    cov = document.get("cov")
    lines = [
        f"{document['command']}: method={document['method']} problem={document['problem']} "
        f"seed={document['seed']} reps={document['reps']}",
        f"  P_f   = {document['estimate']:.4e}",
        f"  CoV   = {cov:.4f}" if cov is not None else "  CoV   = n/a",
        f"  calls = {document['mean_calls']:.0f} (mean per run), {document['calls']} total",
    ]
    reps = document.get("replications", [])
    if len(reps) == 1 and reps[0]["levels"]:
        lines.append(f"  levels = {len(reps[0]['levels'])}")
    return "\n".join(lines)
