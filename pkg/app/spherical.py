"""
Spherical two-parameter relaxation for high-dimensional inputs.

The limit state is relaxed by scaling its argument, G(xi * x), which is the
same as scaling the excitation intensity when the response is driven linearly
by x. Because the chi radius of a standard normal vector concentrates at
R = sqrt(n), the level probability at (eps, xi) is close to the failure ratio
of the sphere of radius xi * R; the failure-ratio models in
app.failure_ratio use this to pick the next xi without trial calls and to
answer off-grid queries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

from app import worker
from app.config import KernelConfig, Ranges, SphericalConfig
from app.coremath import RandomStream
from app.coupled import GridCell, Node, SurfaceGrid, needs_samples, grid_axis, resolve_ranges, sweep_threshold
from app.errors import ContractViolation, DegenerateLevelError, DomainError, FitError, NonConvergenceError, RangeError
from app.failure_ratio import RatioRow, extrapolate_xi, fit_failure_ratio, fit_ratio_row
from app.logger import get_logger
from app.problems import ReliabilityProblem
from app.ris import LevelRecord, Relaxation
from app.sampler import Stage

log = get_logger(__name__)


@dataclass(frozen=True)
class SphericalCell:
    """A grid cell plus the ratio rows bracketing it in eps."""

    cell: GridCell
    upper_row: RatioRow
    lower_row: RatioRow
    reference_radius: float


def _row_theta(cell: SphericalCell, eps: float, r: float) -> float:
    upper = float(cell.upper_row(r))
    c = cell.cell
    if c.eps_hi == c.eps_lo or abs(eps - c.eps_hi) <= 1e-12 * max(1.0, abs(c.eps_hi)):
        return upper
    lower = float(cell.lower_row(r))
    if upper <= 0.0 or lower <= 0.0:
        return 0.0
    w = (eps - c.eps_lo) / (c.eps_hi - c.eps_lo)
    return math.exp(w * math.log(upper) + (1.0 - w) * math.log(lower))


def is_two_query(cell: SphericalCell, eps: float, xi: float) -> float | None:
    """
    P_ij * theta(xi R; eps) / theta(xi_j R; eps_i), with theta log-linear in eps
    between the bracketing rows. None when the model ratio is undefined.
    """
    c = cell.cell
    if not c.contains(eps, xi):
        raise RangeError(f"query (eps={eps}, xi={xi}) outside cell [{c.eps_lo}, {c.eps_hi}] x [{c.xi_lo}, {c.xi_hi}]")
    p = c.node.probability
    if c.is_anchor(eps, xi):
        return p
    den = float(cell.upper_row(c.xi_hi * cell.reference_radius))
    num = _row_theta(cell, eps, xi * cell.reference_radius)
    if not (den > 0.0 and num > 0.0 and math.isfinite(num)):
        return None
    return float(min(1.0, p * num / den))


@dataclass
class SphericalGrid(SurfaceGrid):
    rows: list[RatioRow] = field(default_factory=list)

    @property
    def reference_radius(self) -> float:
        return math.sqrt(self.dimension)

    def spherical_cell(self, cell: GridCell) -> SphericalCell:
        lower = self.rows[min(cell.i + 1, len(self.rows) - 1)]
        return SphericalCell(cell, self.rows[cell.i], lower, self.reference_radius)

    def query(self, eps: float, xi: float) -> float:
        exact = self.node_probability(eps, xi)
        if exact is not None:
            return exact
        cell = self.locate(eps, xi)
        value = is_two_query(self.spherical_cell(cell), eps, xi)
        if value is None:
            log.debug("ratio model undefined; interpolating grid nodes", extra={"eps": eps, "xi": xi})
            return self.interpolate_nodes(eps, xi)
        return value


def predict_next_xi(
    history: list[tuple[float, float]],
    xi_current: float,
    p_current: float,
    config: SphericalConfig,
    n: int,
) -> float:
    """
    Next input scale from a failure-ratio fit on (xi_k R, P_k) of the branch
    holding p_current; a geometric step when the fit fails or the target ratio
    would cross branches.
    """
    fallback = max(1.0, config.fallback_factor * xi_current)
    branch = "low" if p_current <= 0.5 else "high"
    if branch == "high" and p_current * config.rho < 0.5:
        log.warning("target ratio crosses the branch boundary; taking a geometric step",
                    extra={"xi": xi_current, "probability": p_current, "xi_next": fallback})
        return fallback
    points = [(r, p) for r, p in history if (p <= 0.5) == (branch == "low")]
    try:
        model = fit_failure_ratio(points, branch, n)
        xi_next = extrapolate_xi(model, xi_current, config.rho, math.sqrt(n))
    except (FitError, ContractViolation, DomainError) as e:
        log.warning(
            "failure-ratio extrapolation failed; taking a geometric step",
            extra={"xi": xi_current, "xi_next": fallback, "error": str(e), "error_type": type(e).__name__},
        )
        return fallback
    if not xi_next < xi_current:
        return fallback
    log.debug("xi extrapolated", extra={"xi": xi_current, "xi_next": xi_next, "terms": model.terms,
                                         "residual": model.residual})
    return xi_next


def is_two(
    problem: ReliabilityProblem,
    ranges: Ranges | None,
    config: SphericalConfig,
    kernel: KernelConfig,
    rng: RandomStream,
    jobs: int = 1,
) -> SphericalGrid:
    """
    IS-II surface: xi reduced at eps_1 by failure-ratio extrapolation, then an
    indicator eps sweep per xi node at that node's limit-state scale. A step
    that loses every hit is retried halfway back toward the current xi.
    """
    n = problem.dimension
    radius = math.sqrt(n)
    calls_before = problem.calls
    relax = Relaxation(problem, config.n_samples, kernel, rng, seed_fraction=config.p)
    eps_max, xi_max, pilot_calls = resolve_ranges(problem, ranges, relax)
    eps_axis = grid_axis(eps_max, 0.0, config.grid_eps)
    xi_axis = grid_axis(xi_max, 1.0, config.grid_xi)
    t1, t2 = len(eps_axis), len(xi_axis)
    needs = partial(needs_samples, t1=t1, t2=t2, corners=False)
    log.info("IS-II grid", extra={"eps_axis": eps_axis, "xi_axis": xi_axis, "dimension": n})

    eps_1 = float(eps_axis[0])
    level = relax.initial(Stage(threshold=eps_1, lsf_scale=float(xi_axis[0])), sample=needs(0, 0))
    level.calls += pilot_calls
    nodes: dict[Node, LevelRecord] = {(0, 0): level}
    levels = [level]
    history = [(float(xi_axis[0]) * radius, level.probability)]

    for j in range(1, t2):
        target = float(xi_axis[j])
        while level.stage.lsf_scale > target:
            if len(levels) > config.max_levels:
                raise NonConvergenceError(f"IS-II exceeded {config.max_levels} levels reducing xi")
            xi_cur = level.stage.lsf_scale
            xi_next = max(predict_next_xi(history, xi_cur, level.probability, config, n), target)
            wasted = 0
            for attempt in range(config.max_retries + 1):
                on_node = xi_next <= target
                stage = Stage(threshold=eps_1, lsf_scale=xi_next)
                try:
                    committed = relax.advance(level, stage, sample=needs(0, j) if on_node else True)
                    break
                except DegenerateLevelError as e:
                    wasted += len(level.samples)
                    if attempt == config.max_retries:
                        raise
                    retry = 0.5 * (xi_next + xi_cur)
                    log.warning(
                        "xi step lost every failure sample; retrying closer",
                        extra={"xi": xi_cur, "xi_tried": xi_next, "xi_retry": retry, "attempt": attempt + 1,
                               "error": str(e), "error_type": type(e).__name__},
                    )
                    xi_next = retry
            committed.calls += wasted
            level = committed
            levels.append(level)
            history.append((xi_next * radius, level.probability))
        nodes[(0, j)] = level

    if t1 > 1:
        sweeps = [
            partial(sweep_threshold, relax.fork(j), nodes[(0, j)], eps_axis, j, needs, config.max_levels, config.p)
            for j in range(t2)
        ]
        for row_nodes, row_levels in worker.gather_in_threads(sweeps, jobs):
            nodes.update(row_nodes)
            levels.extend(row_levels)

    rows = []
    for i in range(t1):
        points = [(float(xi_axis[j]) * radius, nodes[(i, j)].probability) for j in range(t2)]
        if i == 0:
            points = sorted(set(points) | set(history))
        rows.append(fit_ratio_row(points, n))

    grid = SphericalGrid(
        "is2", "IS-II extrapolation-model", eps_axis, xi_axis, nodes, levels,
        problem.calls - calls_before, problem.axes, n, rows,
    )
    log.info("IS-II surface complete", extra={"calls": grid.calls, "levels": len(levels), "terminal": grid.terminal.probability})
    return grid
