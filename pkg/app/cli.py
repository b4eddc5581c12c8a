# app/cli.py
"""
Batch front end.

  python -m app estimate  --problem parabolic:d=5 --method ais --reps 100 --seed 7
  python -m app fragility --problem seismic2d --method is1 --ranges pga=0.05:0.4,b=0.00125:0.0025 --grid 6x8
  python -m app bench     --suite table1

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
import uuid
from pathlib import Path
from typing import Any, Sequence

from pydantic import ValidationError

from app import payloads
from app.config import Ranges, RunConfig
from app.coremath import RandomStream
from app.errors import ConfigurationError, DomainError, RISError
from app.logger import bind_run, configure_root_logging, get_logger
from app.settings import OUTPUT_DIR, RECORD_RUNS

log = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

METHODS = ("ss", "sis", "ais", "is1", "is2", "dmc")
SURFACE_METHODS = ("is1", "is2")


# ----------------------------
# Argument parsing
# ----------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ris", description="Relaxation-based importance sampling toolkit")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default from LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--problem", help="problem string, e.g. parabolic:d=5, linear:beta=3,n=2")
        p.add_argument("--config", help="JSON config file (a run manifest also works)")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, help="worker threads (default: logical cores)")

    est = sub.add_parser("estimate", help="point estimate of the failure probability")
    common(est)
    est.add_argument("--method", choices=METHODS)
    est.add_argument("--reps", type=int, help="independent replications (>= 2 reports the CoV)")
    est.add_argument("--out", help="write the run document here (plus PATH.manifest.json)")

    frag = sub.add_parser("fragility", help="fragility surface from a single IS-I / IS-II run")
    common(frag)
    frag.add_argument("--method", choices=SURFACE_METHODS)
    frag.add_argument("--ranges", help="pga=LO:HI,b=LO:HI (physical) or eps=LO:HI,xi=LO:HI")
    frag.add_argument("--grid", help="coarse grid EPSxXI node counts, e.g. 6x8")
    frag.add_argument("--dense", type=int, help="dense resolution per axis (default 50)")
    frag.add_argument("--thresholds", help="comma-separated thresholds b for fragility curves")
    frag.add_argument("--out", help="output directory (default OUTPUT_DIR)")

    bench = sub.add_parser("bench", help="benchmark suites with pass/fail rows")
    bench.add_argument("--suite", choices=("table1", "analytic"), default="table1")
    bench.add_argument("--reps", type=int)
    bench.add_argument("--seed", type=int, default=7)
    bench.add_argument("--jobs", type=int, default=None)
    bench.add_argument("--out", help="CSV path (default OUTPUT_DIR/bench_<suite>.csv)")
    return parser


def _parse_interval(text: str, key: str) -> tuple[float, float]:
    lo, sep, hi = text.partition(":")
    try:
        a, b = float(lo), float(hi)
    except ValueError:
        raise ConfigurationError(f"range {key}={text!r} is not LO:HI") from None
    if not sep or a > b:
        raise ConfigurationError(f"range {key}={text!r} is not an increasing LO:HI interval")
    return a, b


def _with_param(problem: str, key: str, value: float) -> str:
    kind, _, body = problem.partition(":")
    parts = [p for p in body.split(",") if p.strip() and p.partition("=")[0].strip() != key]
    parts.append(f"{key}={value:.12g}")
    return f"{kind}:{','.join(parts)}"


def parse_ranges(text: str, problem: str) -> tuple[str, Ranges]:
    """
    Relaxation box from --ranges. Physical ranges rewrite the problem string:
    pga=LO:HI sets the base PGA to LO and xi_max = HI/LO; b=LO:HI sets the
    capacity to HI and eps_max = HI - LO.
    """
    fields: dict[str, tuple[float, float]] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        if not sep:
            raise ConfigurationError(f"malformed range {part!r}")
        fields[key.strip()] = _parse_interval(value.strip(), key.strip())
    unknown = set(fields) - {"pga", "b", "eps", "xi"}
    if unknown:
        raise ConfigurationError(f"unknown range keys: {sorted(unknown)}")
    eps_max, xi_max = 0.0, 1.0
    if "pga" in fields:
        lo, hi = fields["pga"]
        if lo <= 0.0:
            raise ConfigurationError("pga range must be positive")
        problem, xi_max = _with_param(problem, "pga", lo), hi / lo
    if "b" in fields:
        lo, hi = fields["b"]
        problem, eps_max = _with_param(problem, "b", hi), hi - lo
    if "xi" in fields:
        lo, hi = fields["xi"]
        if lo != 1.0:
            raise ConfigurationError("xi range must start at 1")
        xi_max = hi
    if "eps" in fields:
        lo, hi = fields["eps"]
        if lo != 0.0:
            raise ConfigurationError("eps range must start at 0")
        eps_max = hi
    return problem, Ranges(eps_max=eps_max, xi_max=xi_max)


def _parse_grid(text: str) -> tuple[int, int]:
    eps, sep, xi = text.lower().partition("x")
    try:
        return int(eps), int(xi)
    except ValueError:
        raise ConfigurationError(f"grid {text!r} is not EPSxXI") from None


def load_config(args: argparse.Namespace) -> RunConfig:
    """Config file (if any) with CLI flags applied on top."""
    doc: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config {args.config}: {e}") from e
    config = RunConfig.model_validate(doc)
    updates: dict[str, Any] = {}
    for name in ("problem", "method", "seed", "reps", "jobs", "dense"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    if getattr(args, "thresholds", None):
        try:
            updates["thresholds"] = [float(v) for v in args.thresholds.split(",") if v.strip()]
        except ValueError:
            raise ConfigurationError(f"thresholds {args.thresholds!r} are not numbers") from None
    merged = config.model_dump()
    merged.update(updates)
    if getattr(args, "ranges", None):
        merged["problem"], ranges = parse_ranges(args.ranges, merged["problem"])
        merged["ranges"] = ranges.model_dump()
    if getattr(args, "grid", None):
        eps, xi = _parse_grid(args.grid)
        for section in ("coupled", "spherical"):
            merged[section] = {**merged[section], "grid_eps": eps, "grid_xi": xi}
    # revalidate so flag values get the same checks as file values
    return RunConfig.model_validate(merged)


# ----------------------------
# Ledger
# ----------------------------

def _record(document: dict[str, Any], wall_time_s: float, status: str = "ok", error: str | None = None) -> None:
    if not RECORD_RUNS:
        return
    from app.db import ledger_session
    from app.worker import persist_run

    with ledger_session() as db:
        persist_run(db, document, wall_time_s, status, error)


def _record_failure(command: str, config: RunConfig | None, started: float, status: str, error: Exception) -> None:
    # nothing to key the row on when the config itself did not load
    if config is None or command == "bench":
        return
    _record(payloads.failure_document(command, config), time.perf_counter() - started, status, str(error))


# ----------------------------
# Commands
# ----------------------------

def cmd_estimate(config: RunConfig, out: str | None) -> dict[str, Any]:
    from app.problems import parse_problem
    from app.ris import replicate_and_cov
    from app.strategies import run_method

    start = time.perf_counter()
    if config.reps == 1:
        result = run_method(parse_problem(config.problem), config, RandomStream(config.seed, 0), jobs=config.jobs)
        document = payloads.estimate_document(config, [result])
    else:
        def runner(rng: RandomStream):
            return run_method(parse_problem(config.problem), config, rng)

        stats = replicate_and_cov(runner, config.reps, config.seed, config.jobs)
        document = payloads.estimate_document(config, stats.results, stats)
    wall = time.perf_counter() - start
    print(payloads.summary_text(document))
    if out:
        path = payloads.write_json(out, document)
        manifest = payloads.manifest_document(document, wall, [str(path)])
        payloads.write_json(f"{out}.manifest.json", manifest)
    _record(document, wall)
    return document


def cmd_fragility(config: RunConfig, out: str | None) -> dict[str, Any]:
    from app import coupled, fragility, spherical
    from app.config import config_hash
    from app.problems import parse_problem

    if config.method not in SURFACE_METHODS:
        raise ConfigurationError(f"fragility needs method is1 or is2, got {config.method!r}")
    problem = parse_problem(config.problem)
    rng = RandomStream(config.seed, 0)
    start = time.perf_counter()
    if config.method == "is1":
        grid = coupled.is_one(problem, config.ranges, config.coupled, config.kernel, rng, jobs=config.jobs)
    else:
        grid = spherical.is_two(problem, config.ranges, config.spherical, config.kernel, rng, jobs=config.jobs)
    surface = fragility.assemble_surface(
        grid, config.dense, metadata={"seed": config.seed, "config_hash": config_hash(config), "problem": config.problem},
    )
    curves = [fragility.extract_curve(surface, b) for b in config.thresholds]
    wall = time.perf_counter() - start

    out_dir = Path(out or OUTPUT_DIR)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [
        fragility.export(surface, "csv", out_dir / "surface.csv"),
        fragility.export(surface, "json", out_dir / "surface.json"),
    ]
    for curve in curves:
        written.append(fragility.export(curve, "csv", out_dir / f"curve_b{curve.threshold:.6g}.csv"))
    document = payloads.fragility_document(config, grid, config.thresholds)
    written.append(payloads.write_json(out_dir / "fragility.json", document))
    manifest = payloads.manifest_document(document, wall, [str(p) for p in written])
    payloads.write_json(out_dir / "manifest.json", manifest)

    print(payloads.summary_text(document))
    print(f"  surface = {len(surface.threshold)} thresholds x {len(surface.intensity)} intensities -> {out_dir}")
    _record(document, wall)
    return document


def cmd_bench(args: argparse.Namespace) -> int:
    from app.settings import DEFAULT_JOBS
    from app.suites import run_suite, write_rows

    rows = run_suite(args.suite, args.reps, args.seed, args.jobs or DEFAULT_JOBS)
    path = write_rows(rows, args.out or Path(OUTPUT_DIR) / f"bench_{args.suite}.csv")
    for r in rows:
        print(f"{r.case:<24} {r.method:<4} est={r.estimate:.4e} ref={r.reference:.4e} "
              f"rel={r.rel_error:.3f} cov={r.cov:.4f} calls={r.mean_calls:.0f} {'pass' if r.passed else 'FAIL'}")
    print(f"{sum(r.passed for r in rows)}/{len(rows)} rows pass -> {path}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_root_logging(args.log_level)
    config: RunConfig | None = None
    started = time.perf_counter()
    try:
        if args.command == "bench":
            with bind_run(run_id=uuid.uuid4().hex[:12], command="bench"):
                return cmd_bench(args)
        config = load_config(args)
        with bind_run(run_id=uuid.uuid4().hex[:12], command=args.command, method=config.method):
            if args.command == "estimate":
                cmd_estimate(config, args.out)
            else:
                cmd_fragility(config, args.out)
        return EXIT_OK
    except (ConfigurationError, DomainError, ValidationError) as e:
        log.error("configuration error", extra={"error": str(e), "error_type": type(e).__name__})
        _record_failure(args.command, config, started, "config_error", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RISError as e:
        log.error("run failed", extra={"error": str(e), "error_type": type(e).__name__})
        _record_failure(args.command, config, started, "numerical_error", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
