"""
Generic relaxation-based importance sampling driver.

A run moves through a sequence of stages eta_1, ..., eta_T (see
app.sampler.Stage). The first stage is estimated by crude Monte Carlo from its
reference density; every later stage contributes the ratio

    P_{j+1} / P_j = E_{h_j}[ eta_{j+1}(x) / eta_j(x) ]

estimated on the samples of the previous level, and P_f is the product of the
chain. Probabilities are carried in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import optimize, special

from app.config import KernelConfig
from app.coremath import RandomStream
from app.errors import ConfigurationError, ContractViolation, DegenerateLevelError, InitializationError
from app.logger import get_logger
from app.problems import ReliabilityProblem
from app.sampler import ChainState, Stage, Target, populate
from app import worker

log = get_logger(__name__)

MIN_LEVEL_SAMPLES = 100


@dataclass
class LevelRecord:
    index: int
    stage: Stage
    samples: ChainState | None
    log_path: tuple[float, ...]
    calls: int
    step_size: float | None = None
    accept_rate: float | None = None

    @property
    def log_ratio(self) -> float:
        return self.log_path[-1]

    @property
    def ratio(self) -> float:
        return math.exp(self.log_ratio)

    @property
    def log_probability(self) -> float:
        return math.fsum(self.log_path)

    @property
    def probability(self) -> float:
        return math.exp(self.log_probability)


@dataclass
class RunResult:
    method: str
    levels: list[LevelRecord]
    calls: int
    estimate: float
    # (parameter, probability) byproducts: CDF points for SS, fragility curve for AIS
    curve: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class EstimateStats:
    mean: float
    cov: float
    mean_calls: float
    estimates: tuple[float, ...]
    calls: tuple[int, ...]
    results: list[RunResult] = field(default_factory=list, repr=False)


@dataclass
class InitialLevel:
    probability: float
    log_probability: float
    seeds: ChainState
    draws: ChainState
    log_weights: NDArray[np.float64]


# ----------------------------
# Building blocks
# ----------------------------

def log_mean_exp(log_weights: NDArray[np.float64]) -> float:
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        return -math.inf
    return float(special.logsumexp(lw) - math.log(lw.size))


def select_seeds(
    draws: ChainState,
    log_weights: NDArray[np.float64],
    cap: int | None,
    gen: np.random.Generator,
) -> ChainState:
    """
    Seeds for the next level's chains. Equal positive weights (indicator steps)
    keep the hits, capped by a random subset; graded weights are resampled.
    """
    finite = np.isfinite(log_weights)
    if not finite.any():
        raise DegenerateLevelError("no sample carries positive weight for the next stage")
    positive = log_weights[finite]
    if np.all(positive == positive[0]):
        hits = np.flatnonzero(finite)
        if cap is not None and hits.size > cap:
            hits = np.sort(gen.choice(hits, size=cap, replace=False))
        return draws[hits]
    k = cap if cap is not None else int(finite.sum())
    w = np.exp(np.where(finite, log_weights - positive.max(), -np.inf))
    idx = np.sort(gen.choice(len(draws), size=k, replace=True, p=w / w.sum()))
    return draws[idx]


def estimate_initial_level(
    problem: ReliabilityProblem,
    stage: Stage,
    n_samples: int,
    rng: RandomStream,
    seed_cap: int | None = None,
) -> InitialLevel:
    """Crude MC of the most-relaxed stage from its reference density N(0, xi^2 I)."""
    if n_samples < MIN_LEVEL_SAMPLES:
        raise ConfigurationError(f"level sample size must be at least {MIN_LEVEL_SAMPLES}, got {n_samples}")
    gen = rng.generator()
    x = gen.standard_normal((n_samples, problem.dimension))
    if stage.pdf_scale != 1.0:
        x = stage.pdf_scale * x
    g = Target(stage, problem).evaluate(x)
    log_w = stage.log_relax(g)
    log_p = log_mean_exp(log_w)
    if log_p == -math.inf:
        raise InitializationError(
            f"no hits in {n_samples} draws of the initial relaxed event; increase the initial relaxation"
        )
    draws = ChainState(x, g)
    seeds = select_seeds(draws, log_w, seed_cap, gen)
    return InitialLevel(math.exp(log_p), log_p, seeds, draws, log_w)


def adapt_quantile_lambda(g_values: NDArray[np.float64], p: float, terminal: float = 0.0) -> float:
    """Lower empirical p-quantile (order statistic ceil(p*N)), clamped at the terminal threshold."""
    g = np.sort(np.asarray(g_values, dtype=float))
    if g.size == 0:
        raise ConfigurationError("quantile of an empty sample")
    if not 0.0 < p < 1.0:
        raise ConfigurationError(f"level probability must lie in (0, 1), got {p}")
    k = max(1, math.ceil(p * g.size - 1e-9))
    return max(float(g[k - 1]), terminal)


def weight_cov(weights: NDArray[np.float64]) -> float:
    w = np.asarray(weights, dtype=float)
    mean = w.mean()
    if not mean > 0.0:
        return math.inf
    return float(w.std() / mean)


def adapt_weight_cov_lambda(
    current: float,
    terminal: float,
    weight_fn: Callable[[float], NDArray[np.float64]],
    delta_target: float,
    upper: float | None = None,
    grid_points: int = 16,
) -> float:
    """
    Next relaxation value lam' in [terminal, current) with CoV(weight_fn(lam')) = delta_target.
    weight_fn must work from cached quantities only. `upper` replaces `current`
    as the bracket end when current is infinite.
    """
    if weight_cov(weight_fn(terminal)) <= delta_target:
        return terminal
    hi = upper if upper is not None else current
    if not math.isfinite(hi) or hi <= terminal:
        raise ConfigurationError(f"invalid relaxation bracket [{terminal}, {hi}]")

    def excess(lam: float) -> float:
        return weight_cov(weight_fn(lam)) - delta_target

    grid = np.linspace(terminal, hi, grid_points)
    values = [excess(float(lam)) for lam in grid]
    brackets = [
        (float(grid[i]), float(grid[i + 1]))
        for i in range(grid_points - 1)
        if values[i] > 0.0 >= values[i + 1]
    ]
    crossings = sum(1 for i in range(grid_points - 1) if (values[i] > 0.0) != (values[i + 1] > 0.0))
    if not brackets:
        raise DegenerateLevelError(f"weight CoV never drops to {delta_target} on [{terminal}, {hi}]")
    if crossings > 1:
        log.warning(
            "non-monotone weight CoV; taking the smallest bracketed solution",
            extra={"crossings": crossings, "bracket": brackets[0]},
        )
    lo, hi = brackets[0]
    if excess(hi) == 0.0:
        return hi
    return float(optimize.bisect(excess, lo, hi, xtol=1e-12 * max(1.0, abs(hi)), maxiter=400))


def estimate_ratio(log_weights: NDArray[np.float64]) -> float:
    """Mean of eta_{j+1}/eta_j over the level's samples (weights given in log form)."""
    log_r = log_mean_exp(log_weights)
    if log_r == -math.inf:
        raise DegenerateLevelError("all importance weights vanished; the relaxation step is too aggressive")
    return math.exp(log_r)


def chain_product(levels: Sequence[LevelRecord]) -> float:
    """P_1 times the level ratios, accumulated in log space."""
    return math.exp(math.fsum(lv.log_ratio for lv in levels))


def replicate_and_cov(
    runner: Callable[[RandomStream], RunResult],
    reps: int,
    seed: int,
    jobs: int = 1,
) -> EstimateStats:
    """Independent runs on streams (seed, 0..reps-1); CoV is measured across runs."""
    if reps < 2:
        raise ConfigurationError(f"replication statistics need at least 2 runs, got {reps}")
    results = worker.gather_in_threads([partial(runner, RandomStream(seed, r)) for r in range(reps)], jobs)
    estimates = np.array([r.estimate for r in results])
    calls = np.array([r.calls for r in results])
    mean = float(estimates.mean())
    cov = float(estimates.std(ddof=1) / mean) if mean > 0.0 else math.inf
    log.info(
        "replications finished",
        extra={"reps": reps, "mean": mean, "cov": cov, "mean_calls": float(calls.mean())},
    )
    return EstimateStats(mean, cov, float(calls.mean()), tuple(estimates.tolist()), tuple(calls.tolist()), results)


# ----------------------------
# Driver
# ----------------------------

class Relaxation:
    """
    Mutable state shared by the levels of one run: the problem, level sample
    size, seed cap, kernel settings, the carried step size and stream lineage.
    """

    def __init__(
        self,
        problem: ReliabilityProblem,
        n_samples: int,
        kernel: KernelConfig,
        rng: RandomStream,
        seed_fraction: float = 0.1,
        jobs: int = 1,
        step_size: float | None = None,
    ) -> None:
        self.problem = problem
        self.n_samples = n_samples
        self.kernel = kernel
        self.rng = rng
        self.seed_fraction = seed_fraction
        self.seed_cap = max(1, math.ceil(seed_fraction * n_samples - 1e-9))
        self.jobs = jobs
        self.step_size = step_size or kernel.step_size
        self._next_stream = 1

    def stream(self) -> RandomStream:
        sid = self._next_stream
        self._next_stream += 1
        return self.rng.child(sid)

    def fork(self, branch: int) -> "Relaxation":
        """Independent driver for a parallel sweep; its streams depend only on `branch`."""
        return Relaxation(
            self.problem, self.n_samples, self.kernel, self.rng.child(1_000_000 + branch),
            self.seed_fraction, self.jobs, self.step_size,
        )

    def _commit(self, record: LevelRecord) -> LevelRecord:
        log.info(
            "level committed",
            extra={
                "level": record.index,
                **record.stage.describe(),
                "probability": record.probability,
                "ratio": record.ratio,
                "calls": record.calls,
            },
        )
        return record

    def initial(self, stage: Stage, sample: bool = True) -> LevelRecord:
        init = estimate_initial_level(self.problem, stage, self.n_samples, self.rng.child(0), self.seed_cap)
        calls = self.n_samples
        samples: ChainState | None = None
        step = accept = None
        if np.all(init.log_weights == 0.0):
            # reference density is the stage density: the draws are exact samples
            samples = init.draws
        elif sample:
            run = populate(init.seeds, Target(stage, self.problem), self.n_samples, self.kernel,
                           self.stream(), self.step_size, self.jobs)
            self.step_size = run.step_size
            samples, calls = run.samples, calls + run.calls
            step, accept = run.step_size, run.accept_rate
        return self._commit(LevelRecord(0, stage, samples, (init.log_probability,), calls, step, accept))

    def level_weights(self, level: LevelRecord, stage: Stage) -> tuple[NDArray[np.float64], NDArray[np.float64], int]:
        """(log weights, G at the new stage's lsf_scale, calls spent) on the level's samples."""
        if level.samples is None:
            raise ContractViolation(f"level {level.index} holds no samples to step from")
        x, g_cur = level.samples.x, level.samples.g
        calls = 0
        if stage.lsf_scale != level.stage.lsf_scale:
            g = Target(stage, self.problem).evaluate(x)
            calls = x.shape[0]
        else:
            g = g_cur
        log_w = stage.log_relax(g) - level.stage.log_relax(g_cur)
        if stage.pdf_scale != level.stage.pdf_scale:
            log_w = log_w + stage.log_prior(x) - level.stage.log_prior(x)
        return log_w, g, calls

    def advance(self, level: LevelRecord, stage: Stage, sample: bool = True) -> LevelRecord:
        log_w, g, calls = self.level_weights(level, stage)
        log_r = log_mean_exp(log_w)
        if log_r == -math.inf:
            raise DegenerateLevelError(
                f"all importance weights vanished stepping from level {level.index} to {stage.describe()}"
            )
        samples: ChainState | None = None
        step = accept = None
        if sample:
            stream = self.stream()
            seeds = select_seeds(ChainState(level.samples.x, g), log_w, self.seed_cap, stream.child(2).generator())
            run = populate(seeds, Target(stage, self.problem), self.n_samples, self.kernel,
                           stream, self.step_size, self.jobs)
            self.step_size = run.step_size
            samples, calls = run.samples, calls + run.calls
            step, accept = run.step_size, run.accept_rate
        record = LevelRecord(level.index + 1, stage, samples, level.log_path + (log_r,), calls, step, accept)
        return self._commit(record)
