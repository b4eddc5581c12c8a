"""
Two-parameter relaxation over a rectangular (eps, xi) grid.

The grid spans eps_1 > ... > eps_T1 = 0 (threshold offset, G <= eps) and
xi_1 > ... > xi_T2 = 1 (input scale). Node (i, j) holds the committed level
whose stage is (eps_i, xi_j). Phase 1 walks xi down at eps_1; each xi node
then sweeps eps down to 0 with quantile-driven indicator steps forced to land
on the grid values. Off-grid queries reweight the samples stored at the cell's
upper corner and spend no limit-state calls.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from app import worker
from app.config import CoupledConfig, KernelConfig, Ranges
from app.coremath import RandomStream, scaled_gaussian_log_pdf
from app.errors import ConfigurationError, ContractViolation, NonConvergenceError, RangeError
from app.logger import get_logger
from app.problems import FragilityAxes, ReliabilityProblem
from app.ris import LevelRecord, Relaxation, RunResult, adapt_quantile_lambda, adapt_weight_cov_lambda, log_mean_exp
from app.settings import IS_ONE_DIMENSION_CAP
from app.sampler import Stage

log = get_logger(__name__)

_AXIS_TOL = 1e-12

Node = tuple[int, int]


# ----------------------------
# Grid structures
# ----------------------------

def grid_axis(upper: float, lower: float, points: int) -> NDArray[np.float64]:
    """Descending axis upper -> lower; a collapsed range gives a single node."""
    if points < 1:
        raise ConfigurationError(f"grid axis needs at least one point, got {points}")
    if upper < lower:
        raise ConfigurationError(f"axis range [{lower}, {upper}] is inverted")
    if points == 1 or math.isclose(upper, lower, rel_tol=0.0, abs_tol=_AXIS_TOL):
        return np.array([float(lower)])
    axis = np.linspace(upper, lower, points)
    axis[-1] = lower
    return axis


def _tol(axis: NDArray[np.float64]) -> float:
    return _AXIS_TOL * max(1.0, float(np.max(np.abs(axis))))


def node_index(axis: NDArray[np.float64], value: float) -> int | None:
    hits = np.flatnonzero(np.abs(axis - value) <= _tol(axis))
    return int(hits[0]) if hits.size else None


def cell_index(axis: NDArray[np.float64], value: float, name: str) -> int:
    """Index i of the cell [axis[i+1], axis[i]] holding value; 0 for a single-node axis."""
    tol = _tol(axis)
    if len(axis) == 1:
        if abs(value - axis[0]) <= tol:
            return 0
        raise RangeError(f"{name}={value} outside the collapsed grid axis {{{axis[0]}}}")
    if value > axis[0] + tol or value < axis[-1] - tol:
        raise RangeError(f"{name}={value} outside the grid range [{axis[-1]}, {axis[0]}]")
    for i in range(len(axis) - 1):
        if axis[i + 1] - tol <= value <= axis[i] + tol:
            return i
    raise RangeError(f"{name}={value} not located on the grid axis")


@dataclass(frozen=True)
class GridCell:
    """Cell (i, j) spanning [eps_lo, eps_hi] x [xi_lo, xi_hi], anchored at its upper corner node."""

    i: int
    j: int
    eps_hi: float
    eps_lo: float
    xi_hi: float
    xi_lo: float
    node: LevelRecord

    def contains(self, eps: float, xi: float) -> bool:
        tol = _AXIS_TOL * max(1.0, abs(self.eps_hi), abs(self.xi_hi))
        return (self.eps_lo - tol <= eps <= self.eps_hi + tol) and (self.xi_lo - tol <= xi <= self.xi_hi + tol)

    def is_anchor(self, eps: float, xi: float) -> bool:
        tol = _AXIS_TOL * max(1.0, abs(self.eps_hi), abs(self.xi_hi))
        return abs(eps - self.eps_hi) <= tol and abs(xi - self.xi_hi) <= tol


@dataclass
class SurfaceGrid(ABC):
    method: str
    provenance: str
    eps_axis: NDArray[np.float64]
    xi_axis: NDArray[np.float64]
    nodes: dict[Node, LevelRecord]
    levels: list[LevelRecord]
    calls: int
    axes: FragilityAxes = field(default_factory=FragilityAxes)
    dimension: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.eps_axis), len(self.xi_axis)

    def probability(self, i: int, j: int) -> float:
        return self.nodes[(i, j)].probability

    def probabilities(self) -> NDArray[np.float64]:
        t1, t2 = self.shape
        return np.array([[self.nodes[(i, j)].probability if (i, j) in self.nodes else np.nan
                          for j in range(t2)] for i in range(t1)])

    def missing(self) -> list[Node]:
        t1, t2 = self.shape
        return [(i, j) for i in range(t1) for j in range(t2) if (i, j) not in self.nodes]

    @property
    def terminal(self) -> LevelRecord:
        t1, t2 = self.shape
        return self.nodes[(t1 - 1, t2 - 1)]

    def cell(self, i: int, j: int) -> GridCell:
        t1, t2 = self.shape
        return GridCell(
            i, j,
            float(self.eps_axis[i]), float(self.eps_axis[min(i + 1, t1 - 1)]),
            float(self.xi_axis[j]), float(self.xi_axis[min(j + 1, t2 - 1)]),
            self.nodes[(i, j)],
        )

    def locate(self, eps: float, xi: float) -> GridCell:
        return self.cell(cell_index(self.eps_axis, eps, "eps"), cell_index(self.xi_axis, xi, "xi"))

    def node_probability(self, eps: float, xi: float) -> float | None:
        i, j = node_index(self.eps_axis, eps), node_index(self.xi_axis, xi)
        if i is None or j is None:
            return None
        return self.nodes[(i, j)].probability

    def interpolate_nodes(self, eps: float, xi: float) -> float:
        """Bilinear interpolation of the grid probabilities, in log space where all corners are positive."""
        cell = self.locate(eps, xi)
        i, j = cell.i, cell.j
        t1, t2 = self.shape
        i2, j2 = min(i + 1, t1 - 1), min(j + 1, t2 - 1)
        u = 0.0 if i2 == i else (cell.eps_hi - eps) / (cell.eps_hi - cell.eps_lo)
        v = 0.0 if j2 == j else (cell.xi_hi - xi) / (cell.xi_hi - cell.xi_lo)
        corners = np.array([
            [self.nodes[(i, j)].probability, self.nodes[(i, j2)].probability],
            [self.nodes[(i2, j)].probability, self.nodes[(i2, j2)].probability],
        ])
        wts = np.array([[(1 - u) * (1 - v), (1 - u) * v], [u * (1 - v), u * v]])
        if (corners > 0.0).all():
            return float(np.exp(np.sum(wts * np.log(corners))))
        return float(np.sum(wts * corners))

    @abstractmethod
    def query(self, eps: float, xi: float) -> float:
        """Surface value at (eps, xi) inside the grid range; spends no limit-state calls."""

    def as_run_result(self) -> RunResult:
        """Point-estimate view: the terminal node (0, 1) is P_f; all committed levels are kept for the trace."""
        return RunResult(self.method, list(self.levels), self.calls, self.terminal.probability)


# ----------------------------
# IS-I
# ----------------------------

def is_one_query(cell: GridCell, eps: float, xi: float) -> float:
    """
    P_ij * mean(I(G <= eps) * f(x; xi) / f(x; xi_j)) over the samples stored at
    the cell's upper corner; returns P_ij exactly at the corner.
    """
    if not cell.contains(eps, xi):
        raise RangeError(
            f"query (eps={eps}, xi={xi}) outside cell [{cell.eps_lo}, {cell.eps_hi}] x [{cell.xi_lo}, {cell.xi_hi}]"
        )
    p = cell.node.probability
    if cell.is_anchor(eps, xi):
        return p
    samples = cell.node.samples
    if samples is None:
        raise ContractViolation(f"node ({cell.i}, {cell.j}) stores no samples for reweighting")
    x, g = samples.x, samples.g
    log_w = np.where(g <= eps, 0.0, -np.inf)
    log_w = log_w + scaled_gaussian_log_pdf(x, xi) - scaled_gaussian_log_pdf(x, cell.xi_hi)
    return float(min(1.0, p * math.exp(log_mean_exp(log_w))))


@dataclass
class CoupledGrid(SurfaceGrid):
    def query(self, eps: float, xi: float) -> float:
        exact = self.node_probability(eps, xi)
        if exact is not None:
            return exact
        return is_one_query(self.locate(eps, xi), eps, xi)


def needs_samples(i: int, j: int, t1: int, t2: int, corners: bool) -> bool:
    """A node keeps samples when a later level steps from it or (IS-I) it anchors a cell."""
    successor = i < t1 - 1 or (i == 0 and j < t2 - 1)
    if not corners or (t1 == 1 and t2 == 1):
        return successor
    corner = (i < t1 - 1 or t1 == 1) and (j < t2 - 1 or t2 == 1)
    return successor or corner


def resolve_ranges(
    problem: ReliabilityProblem,
    ranges: Ranges | None,
    relax: Relaxation,
    scale_cap: float = 64.0,
) -> tuple[float, float, int]:
    """(eps_max, xi_max, pilot calls); without ranges xi_max comes from scale doubling at eps = 0."""
    if ranges is not None:
        return ranges.eps_max, ranges.xi_max, 0
    from app.strategies import initial_scale_by_doubling

    xi_max, calls = initial_scale_by_doubling(problem, relax.stream(), cap=scale_cap)
    return 0.0, xi_max, calls


def sweep_threshold(
    relax: Relaxation,
    start: LevelRecord,
    eps_axis: NDArray[np.float64],
    j: int,
    needs: Callable[[int, int], bool],
    max_levels: int,
    p: float,
) -> tuple[dict[Node, LevelRecord], list[LevelRecord]]:
    """Quantile-driven indicator steps from node (0, j) down the eps axis, landing on every grid value."""
    level = start
    nodes: dict[Node, LevelRecord] = {}
    levels: list[LevelRecord] = []
    for i in range(1, len(eps_axis)):
        target = float(eps_axis[i])
        while level.stage.threshold > target:
            if len(levels) > max_levels:
                raise NonConvergenceError(f"eps sweep at xi node {j} exceeded {max_levels} levels")
            threshold = adapt_quantile_lambda(level.samples.g, p, terminal=target)
            on_node = threshold <= target
            stage = Stage(threshold=target if on_node else threshold, smoothing=0.0,
                          pdf_scale=start.stage.pdf_scale, lsf_scale=start.stage.lsf_scale)
            level = relax.advance(level, stage, sample=needs(i, j) if on_node else True)
            levels.append(level)
        nodes[(i, j)] = level
    return nodes, levels


def is_one(
    problem: ReliabilityProblem,
    ranges: Ranges | None,
    config: CoupledConfig,
    kernel: KernelConfig,
    rng: RandomStream,
    jobs: int = 1,
    dimension_cap: int = IS_ONE_DIMENSION_CAP,
) -> CoupledGrid:
    """
    IS-I surface: xi annealed at eps_1 with the weight-CoV rule (clamped to the
    grid values), then an indicator eps sweep per xi node. Rows sweep in
    parallel on forked streams.
    """
    if problem.dimension > dimension_cap:
        raise ConfigurationError(
            f"IS-I relaxes the input density, whose level ratios degrade with dimension; "
            f"n={problem.dimension} exceeds the cap {dimension_cap} (use is2)"
        )
    calls_before = problem.calls
    relax = Relaxation(problem, config.n_samples, kernel, rng, seed_fraction=config.p)
    eps_max, xi_max, pilot_calls = resolve_ranges(problem, ranges, relax)
    eps_axis = grid_axis(eps_max, 0.0, config.grid_eps)
    xi_axis = grid_axis(xi_max, 1.0, config.grid_xi)
    t1, t2 = len(eps_axis), len(xi_axis)
    needs = partial(needs_samples, t1=t1, t2=t2, corners=True)
    log.info("IS-I grid", extra={"eps_axis": eps_axis, "xi_axis": xi_axis, "dimension": problem.dimension})

    eps_1 = float(eps_axis[0])
    level = relax.initial(Stage(threshold=eps_1, pdf_scale=float(xi_axis[0])), sample=needs(0, 0))
    level.calls += pilot_calls
    nodes: dict[Node, LevelRecord] = {(0, 0): level}
    levels = [level]

    for j in range(1, t2):
        target = float(xi_axis[j])
        while level.stage.pdf_scale > target:
            if len(levels) > config.max_levels:
                raise NonConvergenceError(f"IS-I exceeded {config.max_levels} levels annealing xi")
            cur = level.stage
            x = level.samples.x

            def weights(lam: float, cur: Stage = cur, x: NDArray[np.float64] = x) -> NDArray[np.float64]:
                log_w = scaled_gaussian_log_pdf(x, lam) - cur.log_prior(x)
                return np.exp(log_w - log_w.max())

            lam = adapt_weight_cov_lambda(cur.pdf_scale, target, weights, config.delta_target)
            on_node = lam - target <= 1e-9 * target
            stage = Stage(threshold=eps_1, pdf_scale=target if on_node else lam)
            level = relax.advance(level, stage, sample=needs(0, j) if on_node else True)
            levels.append(level)
        nodes[(0, j)] = level

    if t1 > 1:
        sweeps = [
            partial(sweep_threshold, relax.fork(j), nodes[(0, j)], eps_axis, j, needs, config.max_levels, config.p)
            for j in range(t2)
        ]
        for row_nodes, row_levels in worker.gather_in_threads(sweeps, jobs):
            nodes.update(row_nodes)
            levels.extend(row_levels)

    grid = CoupledGrid(
        "is1", "IS-I exact-reweighting", eps_axis, xi_axis, nodes, levels,
        problem.calls - calls_before, problem.axes, problem.dimension,
    )
    log.info("IS-I surface complete", extra={"calls": grid.calls, "levels": len(levels), "terminal": grid.terminal.probability})
    return grid
