"""
Failure-ratio extrapolation models.

theta(r) is the fraction of the radius-r hypersphere lying in the failure
domain. With the chi radius concentrated at R = sqrt(n), the level
probabilities of the spherical strategy are failure ratios at r = xi * R, and
the model below lets the next xi be predicted without limit-state calls.

Low branch (theta <= 0.5):  0.5 * sum_k I(1 - (b_k/r)^2; (n-1)/2, 1/2)
High branch (theta > 0.5):  1 - 0.5 * sum_k I(1 - (b_k/(a-r))^2; (n-1)/2, 1/2)

with I the regularized incomplete beta function. Each term is the cap fraction
of a halfspace at distance b_k, so K = 1 is exact for a halfspace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize, special

from app.errors import ContractViolation, DomainError, FitError
from app.logger import get_logger

log = get_logger(__name__)

Branch = Literal["low", "high"]

_THETA_FLOOR = 1e-300
_THETA_CEIL = 1.0 - 1e-16
_SSR_FLOOR = 1e-12
MAX_TERMS = 3


def _cap_terms(b: NDArray[np.float64], d: NDArray[np.float64], n: int) -> NDArray[np.float64]:
    """Sum over k of I(1 - (b_k/d)^2; (n-1)/2, 1/2), zero where d <= b_k."""
    d = np.asarray(d, dtype=float)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.clip(1.0 - (b / d) ** 2, 0.0, 1.0)
    vals = np.where(d > b, special.betainc((n - 1) / 2.0, 0.5, arg), 0.0)
    return vals.sum(axis=-1)


@dataclass(frozen=True)
class FailureRatioModel:
    branch: Branch
    radii: tuple[float, ...]
    n: int
    shift: float | None = None
    residual: float = 0.0
    fitted_range: tuple[float, float] = (0.0, math.inf)

    @property
    def terms(self) -> int:
        return len(self.radii)

    @property
    def reference_radius(self) -> float:
        return math.sqrt(self.n)

    def __call__(self, r: ArrayLike) -> NDArray[np.float64] | float:
        arr = np.asarray(r, dtype=float)
        b = np.asarray(self.radii, dtype=float)
        if self.branch == "low":
            theta = 0.5 * _cap_terms(b, arr, self.n)
        else:
            theta = 1.0 - 0.5 * _cap_terms(b, self.shift - arr, self.n)
        theta = np.clip(theta, 0.0, 1.0)
        return theta if theta.ndim else float(theta)


def _logit(p: NDArray[np.float64]) -> NDArray[np.float64]:
    p = np.clip(p, _THETA_FLOOR, _THETA_CEIL)
    return np.log(p) - np.log1p(-p)


def _solve_single(r: float, theta: float, branch: Branch, n: int, terms: int, shift: float | None) -> float:
    """Common radius b making a `terms`-term model pass through (r, theta)."""
    if branch == "low":
        level = 2.0 * theta / terms
        span = r
    else:
        level = 2.0 * (1.0 - theta) / terms
        span = shift - r
    level = min(max(level, 1e-300), 1.0)
    if level >= 1.0 - 1e-15:
        return 1e-12 * span

    def gap(b: float) -> float:
        return float(special.betainc((n - 1) / 2.0, 0.5, 1.0 - (b / span) ** 2)) - level

    return float(optimize.brentq(gap, 1e-12 * span, span * (1.0 - 1e-15), xtol=1e-14 * span, maxiter=500))


def _fit_terms(
    r: NDArray[np.float64],
    theta: NDArray[np.float64],
    branch: Branch,
    n: int,
    terms: int,
) -> FailureRatioModel:
    target = _logit(theta)
    r_max = float(r.max())
    mid = int(np.argsort(r)[len(r) // 2])

    if branch == "low":
        def unpack(v: NDArray[np.float64]) -> tuple[NDArray[np.float64], float | None]:
            return np.exp(v), None

        b0 = _solve_single(r[mid], theta[mid], branch, n, terms, None)
        start = np.log(b0 * (1.0 + 0.05 * np.arange(terms)))
    else:
        def unpack(v: NDArray[np.float64]) -> tuple[NDArray[np.float64], float | None]:
            return np.exp(v[:-1]), r_max + math.exp(v[-1])

        shift0 = 2.0 * r_max
        b0 = _solve_single(r[mid], theta[mid], branch, n, terms, shift0)
        start = np.append(np.log(b0 * (1.0 + 0.05 * np.arange(terms))), math.log(shift0 - r_max))

    def predict(v: NDArray[np.float64]) -> NDArray[np.float64]:
        b, shift = unpack(v)
        model = FailureRatioModel(branch, tuple(b), n, shift)
        return np.asarray(model(r))

    def ssr(v: NDArray[np.float64]) -> float:
        res = _logit(predict(v)) - target
        return float(np.dot(res, res))

    if len(r) == 1 and branch == "low" and terms == 1:
        best = start
    else:
        opt = optimize.minimize(
            ssr,
            start,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000 * len(start), "maxfev": 8000 * len(start)},
        )
        best = opt.x
    b, shift = unpack(best)
    order = np.argsort(b)
    return FailureRatioModel(
        branch,
        tuple(float(v) for v in b[order]),
        n,
        shift,
        residual=ssr(best),
        fitted_range=(float(r.min()), r_max),
    )


def fit_failure_ratio(
    points: Sequence[tuple[float, float]],
    branch: Branch,
    n: int,
    terms: int | None = None,
) -> FailureRatioModel:
    """
    Least-squares fit in logit space over {b_k} (and a on the high branch) by
    Nelder-Mead. Without a fixed `terms`, K in {1, 2, 3} is chosen by
    m*log(SSR/m) + 2*(parameter count); K shrinks while there are fewer points
    than parameters.
    """
    if n < 2:
        raise DomainError(f"failure-ratio model needs n >= 2, got {n}")
    data = np.asarray(points, dtype=float).reshape(-1, 2)
    r, theta = data[:, 0], data[:, 1]
    if (r <= 0.0).any():
        raise DomainError("failure-ratio radii must be positive")
    low, high = (0.0, 0.5) if branch == "low" else (0.5, 1.0)
    if ((theta < low) | (theta > high)).any():
        raise DomainError(f"failure ratios outside the {branch} branch range [{low}, {high}]")
    # ratios pinned at the branch edge carry no shape information
    keep = theta > 0.0 if branch == "low" else theta < 1.0
    r, theta = r[keep], theta[keep]
    m = len(r)
    log.debug("failure-ratio points", extra={"branch": branch, "n": n, "radii": r, "ratios": theta})

    candidates = [terms] if terms is not None else list(range(1, MAX_TERMS + 1))
    best: FailureRatioModel | None = None
    best_score = math.inf
    tried: set[int] = set()
    for k in candidates:
        count = k if branch == "low" else k + 1
        while count > m and k > 1:
            k -= 1
            count = k if branch == "low" else k + 1
        if count > m or k in tried:
            continue
        tried.add(k)
        model = _fit_terms(r, theta, branch, n, k)
        score = m * math.log(model.residual / m + _SSR_FLOOR) + 2.0 * count
        if score < best_score:
            best, best_score = model, score
    if best is None:
        raise FitError(f"{m} usable point(s) cannot determine a {branch}-branch failure-ratio model")
    return best


def extrapolate_xi(model: FailureRatioModel, xi_current: float, rho: float, reference_radius: float | None = None) -> float:
    """
    xi in [1, xi_current] with theta(xi R) / theta(xi_current R) = rho, by
    bracketed root finding on the model alone (no limit-state calls).
    """
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"target ratio rho must lie in (0, 1], got {rho}")
    radius = reference_radius if reference_radius is not None else model.reference_radius
    current = float(model(xi_current * radius))
    if not current > 0.0:
        raise ContractViolation("model predicts a zero failure ratio at the current scale")
    if rho == 1.0 or xi_current <= 1.0:
        return max(1.0, xi_current) if rho == 1.0 else 1.0

    def gap(xi: float) -> float:
        return float(model(xi * radius)) / current - rho

    if gap(1.0) >= 0.0:
        return 1.0
    return float(optimize.brentq(gap, 1.0, xi_current, xtol=1e-13, rtol=1e-13, maxiter=500))


@dataclass
class RatioRow:
    """
    Composite failure-ratio curve for one threshold: the low-branch model below
    the switch radius, the high-branch model above it. A branch without a model
    falls back to log-linear interpolation of the row's data.
    """

    n: int
    radii: NDArray[np.float64]
    ratios: NDArray[np.float64]
    low: FailureRatioModel | None = None
    high: FailureRatioModel | None = None
    switch: float = math.inf
    _floor: float = field(default=0.0, init=False)

    def __post_init__(self) -> None:
        order = np.argsort(self.radii)
        self.radii = np.asarray(self.radii, dtype=float)[order]
        # nested construction makes true ratios nondecreasing in r
        self.ratios = np.maximum.accumulate(np.asarray(self.ratios, dtype=float)[order])
        self._floor = float(self._branch_value(np.array([self.switch]), "low")[0]) if math.isfinite(self.switch) else 0.0

    def _interpolate(self, r: NDArray[np.float64]) -> NDArray[np.float64]:
        logs = np.log(np.maximum(self.ratios, _THETA_FLOOR))
        return np.exp(np.interp(r, self.radii, logs))

    def _branch_value(self, r: NDArray[np.float64], branch: Branch) -> NDArray[np.float64]:
        model = self.low if branch == "low" else self.high
        if model is None:
            return self._interpolate(r)
        return np.asarray(model(r), dtype=float)

    def __call__(self, r: ArrayLike) -> NDArray[np.float64] | float:
        arr = np.asarray(r, dtype=float)
        flat = arr.reshape(-1)
        below = flat <= self.switch
        out = np.empty_like(flat)
        out[below] = self._branch_value(flat[below], "low")
        out[~below] = np.maximum(self._branch_value(flat[~below], "high"), self._floor)
        out = out.reshape(arr.shape)
        return out if out.ndim else float(out)


def fit_ratio_row(points: Sequence[tuple[float, float]], n: int) -> RatioRow:
    data = np.asarray(points, dtype=float).reshape(-1, 2)
    r, theta = data[:, 0], np.clip(data[:, 1], 0.0, 1.0)
    low_pts = data[theta <= 0.5]
    high_pts = data[theta > 0.5]
    low = high = None
    for branch, pts in (("low", low_pts), ("high", high_pts)):
        if not len(pts):
            continue
        try:
            model = fit_failure_ratio([tuple(p) for p in pts], branch, n)
        except (FitError, DomainError) as e:
            log.warning(
                "failure-ratio fit failed; interpolating the row data",
                extra={"branch": branch, "points": len(pts), "error": str(e), "error_type": type(e).__name__},
            )
            continue
        if branch == "low":
            low = model
        else:
            high = model
    if len(low_pts) and len(high_pts):
        switch = 0.5 * (float(low_pts[:, 0].max()) + float(high_pts[:, 0].min()))
    elif len(high_pts):
        switch = -math.inf
    else:
        switch = math.inf
    return RatioRow(n, r, theta, low, high, switch)
