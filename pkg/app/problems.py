"""
Reliability problems: a limit-state function G over standard normal space plus
an evaluation counter. Failure is G <= 0.

Problems evaluate (m, n) batches; the counter grows by m per batch, so the
count equals the number of limit-state evaluations however they are grouped.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.dynamics import (
    BASE_PGA,
    G,
    BoucWenParams,
    ExcitationModel,
    peak_displacement,
    spectral_excitation,
    two_record_excitation,
    two_record_model,
    white_noise_model,
)
from app.errors import ConfigurationError, DomainError
from app.settings import RECORDS_DIR

BatchLimitState = Callable[[NDArray[np.float64]], NDArray[np.float64]]


@dataclass(frozen=True)
class FragilityAxes:
    """Maps relaxation parameters onto physical fragility axes.

    intensity = xi * base_intensity; threshold = capacity - eps when a capacity
    is set (response thresholds), otherwise the threshold offset eps itself.
    """

    base_intensity: float = 1.0
    capacity: float | None = None
    unit: float | None = None

    def intensity(self, xi):
        return np.asarray(xi, dtype=float) * self.base_intensity

    def threshold(self, eps):
        eps = np.asarray(eps, dtype=float)
        return self.capacity - eps if self.capacity is not None else eps


class ReliabilityProblem:
    def __init__(
        self,
        name: str,
        dimension: int,
        limit_state: BatchLimitState,
        axes: FragilityAxes | None = None,
    ) -> None:
        if dimension < 1:
            raise DomainError(f"dimension must be positive, got {dimension}")
        self.name = name
        self.dimension = dimension
        self.axes = axes or FragilityAxes()
        self._limit_state = limit_state
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def reset_calls(self) -> None:
        with self._lock:
            self._calls = 0

    def evaluate(self, x: ArrayLike) -> NDArray[np.float64]:
        """G for each row of an (m, n) batch."""
        batch = np.asarray(x, dtype=float)
        if batch.ndim != 2 or batch.shape[1] != self.dimension:
            raise DomainError(f"{self.name}: expected an (m, {self.dimension}) batch, got shape {batch.shape}")
        if batch.shape[0] == 0:
            return np.zeros(0)
        g = np.asarray(self._limit_state(batch), dtype=float).reshape(-1)
        with self._lock:
            self._calls += batch.shape[0]
        return g

    def __call__(self, x: ArrayLike) -> float:
        return float(self.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def __repr__(self) -> str:
        return f"ReliabilityProblem({self.name!r}, n={self.dimension}, calls={self._calls})"


# ----------------------------
# Analytic limit states
# ----------------------------

def parabolic_lsf(x: ArrayLike, d: float) -> NDArray[np.float64] | float:
    """d - x2 - 0.5*(x1 - 0.1)^2 for a 2-vector or an (m, 2) batch."""
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != 2 or arr.ndim > 2:
        raise DomainError(f"parabolic limit state needs 2-vectors, got shape {arr.shape}")
    g = d - arr[..., 1] - 0.5 * (arr[..., 0] - 0.1) ** 2
    return g if arr.ndim == 2 else float(g)


def linear_lsf(x: ArrayLike, beta: float, e: ArrayLike) -> NDArray[np.float64] | float:
    """beta - e.x for a unit direction e."""
    direction = np.asarray(e, dtype=float)
    if not math.isclose(float(np.linalg.norm(direction)), 1.0, abs_tol=1e-10):
        raise DomainError("linear limit state needs a unit direction")
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != direction.shape[0]:
        raise DomainError(f"direction has length {direction.shape[0]}, x has {arr.shape[-1]}")
    # elementwise sum keeps each row's value independent of the batch it travels in
    g = beta - (arr * direction).sum(axis=-1)
    return g if arr.ndim == 2 else float(g)


def make_parabolic(d: float = 5.0) -> ReliabilityProblem:
    return ReliabilityProblem(f"parabolic:d={d:g}", 2, lambda X: parabolic_lsf(X, d))


def make_linear(beta: float = 3.0, n: int = 2, e: ArrayLike | None = None) -> ReliabilityProblem:
    direction = np.full(n, 1.0 / math.sqrt(n)) if e is None else np.asarray(e, dtype=float)
    if direction.shape != (n,):
        raise DomainError(f"direction must have length {n}")
    return ReliabilityProblem(f"linear:beta={beta:g},n={n}", n, lambda X: linear_lsf(X, beta, direction))


# ----------------------------
# Seismic limit states
# ----------------------------

def _excite(x: NDArray[np.float64], model: ExcitationModel) -> NDArray[np.float64]:
    if model.kind == "spectral-white-noise":
        return spectral_excitation(x, model)
    if x.shape[-1] != 2:
        raise DomainError(f"two-record excitation takes 2 variables, got {x.shape[-1]}")
    return two_record_excitation(x[..., 0], x[..., 1], model)


def seismic_lsf(
    x: ArrayLike,
    b: float,
    params: BoucWenParams,
    excitation: ExcitationModel,
) -> NDArray[np.float64] | float:
    """b - max_t |u(t)| for the oscillator driven by the excitation built from x."""
    if not b > 0.0:
        raise DomainError(f"response threshold must be positive, got {b}")
    arr = np.asarray(x, dtype=float)
    accel = _excite(np.atleast_2d(arr), excitation)
    g = b - peak_displacement(params, accel, excitation.dt)
    return g if arr.ndim == 2 else float(g[0])


def make_seismic_two_record(
    b: float | None = None,
    pga: float = BASE_PGA,
    params: BoucWenParams | None = None,
    records_dir: str | None = None,
) -> ReliabilityProblem:
    params = params or BoucWenParams()
    capacity = 2.0 * params.u_y if b is None else b
    model = two_record_model(pga, records_dir if records_dir is not None else RECORDS_DIR)
    axes = FragilityAxes(base_intensity=pga / G, capacity=capacity, unit=params.u_y)
    return ReliabilityProblem(
        f"seismic2d:b={capacity:g},pga={pga / G:g}",
        2,
        lambda X: seismic_lsf(X, capacity, params, model),
        axes,
    )


def make_seismic_white_noise(
    n: int = 1000,
    b: float | None = None,
    pga: float = BASE_PGA,
    params: BoucWenParams | None = None,
) -> ReliabilityProblem:
    params = params or BoucWenParams()
    capacity = 2.0 * params.u_y if b is None else b
    model = white_noise_model(n, pga)
    axes = FragilityAxes(base_intensity=pga / G, capacity=capacity, unit=params.u_y)
    return ReliabilityProblem(
        f"seismic-wn:n={n},b={capacity:g},pga={pga / G:g}",
        n,
        lambda X: seismic_lsf(X, capacity, params, model),
        axes,
    )


# ----------------------------
# Problem strings
# ----------------------------

def _parse_kv(body: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        key, sep, value = part.partition("=")
        if not sep:
            raise ConfigurationError(f"malformed problem parameter {part!r} (expected key=value)")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ConfigurationError(f"problem parameter {key!r} is not a number: {value!r}") from None
    return out


def parse_problem(text: str) -> ReliabilityProblem:
    """
    Build a problem from 'kind:key=value,...'. Seismic pga values are in g and
    thresholds b in meters; omitted b defaults to 2*u_y.

      parabolic:d=5
      linear:beta=3,n=2
      seismic2d:b=0.0025,pga=0.05
      seismic-wn:n=1000,b=0.0025,pga=0.05
    """
    kind, _, body = text.partition(":")
    kv = _parse_kv(body)
    allowed = {
        "parabolic": {"d"},
        "linear": {"beta", "n"},
        "seismic2d": {"b", "pga"},
        "seismic-wn": {"n", "b", "pga"},
    }
    if kind not in allowed:
        raise ConfigurationError(f"unknown problem kind {kind!r}; expected one of {sorted(allowed)}")
    extra = set(kv) - allowed[kind]
    if extra:
        raise ConfigurationError(f"unknown parameters for {kind}: {sorted(extra)}")
    if kind == "parabolic":
        return make_parabolic(kv.get("d", 5.0))
    if kind == "linear":
        return make_linear(kv.get("beta", 3.0), int(kv.get("n", 2)))
    pga = kv.get("pga", 0.05) * G
    if kind == "seismic2d":
        return make_seismic_two_record(kv.get("b"), pga)
    return make_seismic_white_noise(int(kv.get("n", 1000)), kv.get("b"), pga)
