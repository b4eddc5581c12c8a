"""
Fragility surfaces in physical units, read off a completed (eps, xi) grid.

Axes: intensity = xi * base intensity (PGA in g for the seismic problems);
threshold = capacity - eps (response threshold b) or eps itself. The value
matrix is indexed [threshold, intensity], both ascending.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from app.coupled import SurfaceGrid
from app.errors import AssemblyError, RangeError
from app.logger import get_logger

log = get_logger(__name__)

CSV_HEADER = ("pga_g", "threshold_m", "probability")
DEFAULT_DENSE = 50


@dataclass
class FragilitySurface:
    intensity: NDArray[np.float64]
    threshold: NDArray[np.float64]
    values: NDArray[np.float64]
    provenance: str
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
        self.threshold = np.asarray(self.threshold, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.threshold), len(self.intensity))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FragilitySurface):
            return NotImplemented
        return (
            np.array_equal(self.intensity, other.intensity)
            and np.array_equal(self.threshold, other.threshold)
            and np.array_equal(self.values, other.values)
            and self.provenance == other.provenance
            and self.metadata == other.metadata
        )


@dataclass
class FragilityCurve:
    threshold: float
    intensity: NDArray[np.float64]
    probability: NDArray[np.float64]
    provenance: str = ""


def _dense_axis(coarse: NDArray[np.float64], points: int) -> NDArray[np.float64]:
    """Descending union of an evenly spaced axis and the coarse nodes; coarse values win ties."""
    hi, lo = float(coarse[0]), float(coarse[-1])
    fill = np.linspace(hi, lo, points) if points > 1 and hi > lo else np.array([hi])
    tol = 1e-12 * max(1.0, abs(hi), abs(lo))
    extra = [v for v in fill if not np.any(np.abs(coarse - v) <= tol)]
    return np.sort(np.concatenate([coarse, np.asarray(extra, dtype=float)]))[::-1]


def assemble_surface(grid: SurfaceGrid, dense_resolution: int = DEFAULT_DENSE, metadata: dict[str, Any] | None = None) -> FragilitySurface:
    """Dense surface from grid queries; the grid nodes are kept exactly and no limit-state calls are made."""
    missing = grid.missing()
    if missing:
        raise AssemblyError(missing)
    eps_dense = _dense_axis(grid.eps_axis, dense_resolution)
    xi_dense = _dense_axis(grid.xi_axis, dense_resolution)
    values = np.array([[grid.query(float(e), float(x)) for x in xi_dense] for e in eps_dense])
    values = np.clip(values, 0.0, 1.0)

    intensity = np.asarray(grid.axes.intensity(xi_dense), dtype=float)
    threshold = np.asarray(grid.axes.threshold(eps_dense), dtype=float)
    x_order = np.argsort(intensity, kind="stable")
    t_order = np.argsort(threshold, kind="stable")
    meta = {"method": grid.method, "calls": grid.calls, "grid_shape": list(grid.shape)}
    if grid.axes.unit is not None:
        meta["yield_displacement_m"] = grid.axes.unit
    meta.update(metadata or {})
    surface = FragilitySurface(intensity[x_order], threshold[t_order], values[np.ix_(t_order, x_order)],
                               grid.provenance, meta)
    log.info("surface assembled", extra={"thresholds": len(surface.threshold), "intensities": len(surface.intensity),
                                         "provenance": grid.provenance})
    return surface


def extract_curve(surface: FragilitySurface, threshold: float) -> FragilityCurve:
    """Probability against intensity at a fixed threshold, linear in threshold between dense rows."""
    t = surface.threshold
    if not len(t):
        raise RangeError("surface has no thresholds")
    tol = 1e-12 * max(1.0, float(np.max(np.abs(t))))
    if threshold < t[0] - tol or threshold > t[-1] + tol:
        raise RangeError(f"threshold {threshold} outside the surface range [{t[0]}, {t[-1]}]")
    exact = np.flatnonzero(np.abs(t - threshold) <= tol)
    if exact.size:
        row = surface.values[exact[0]].copy()
    else:
        k = int(np.searchsorted(t, threshold))
        w = (threshold - t[k - 1]) / (t[k] - t[k - 1])
        row = (1.0 - w) * surface.values[k - 1] + w * surface.values[k]
    return FragilityCurve(float(threshold), surface.intensity.copy(), row, surface.provenance)


# ----------------------------
# Export / import
# ----------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".12g")


def export_surface_csv(surface: FragilitySurface, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i, b in enumerate(surface.threshold):
            for j, pga in enumerate(surface.intensity):
                w.writerow([_fmt(pga), _fmt(b), _fmt(surface.values[i, j])])
    return path


def export_curve_csv(curve: FragilityCurve, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for pga, p in zip(curve.intensity, curve.probability):
            w.writerow([_fmt(pga), _fmt(curve.threshold), _fmt(p)])
    return path


def _json_number(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


def surface_document(surface: FragilitySurface) -> dict[str, Any]:
    return {
        "provenance": surface.provenance,
        "axes": {
            "pga_g": [float(v) for v in surface.intensity],
            "threshold_m": [float(v) for v in surface.threshold],
        },
        "values": [[_json_number(v) for v in row] for row in surface.values],
        "metadata": surface.metadata,
    }


def export_surface_json(surface: FragilitySurface, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(surface_document(surface), indent=2, sort_keys=True))
    return path


def export(obj: FragilitySurface | FragilityCurve, fmt: str, path: str | Path) -> Path:
    if fmt == "csv":
        if isinstance(obj, FragilityCurve):
            return export_curve_csv(obj, path)
        return export_surface_csv(obj, path)
    if fmt == "json":
        if isinstance(obj, FragilityCurve):
            raise ValueError("curves export as csv only")
        return export_surface_json(obj, path)
    raise ValueError(f"unknown export format {fmt!r}")


def load_surface(path: str | Path) -> FragilitySurface:
    doc = json.loads(Path(path).read_text())
    values = np.array([[np.nan if v is None else v for v in row] for row in doc["values"]], dtype=float)
    return FragilitySurface(
        np.array(doc["axes"]["pga_g"], dtype=float),
        np.array(doc["axes"]["threshold_m"], dtype=float),
        values,
        doc["provenance"],
        doc.get("metadata", {}),
    )
