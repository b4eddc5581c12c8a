"""
Single-parameter relaxation strategies: subset simulation (indicator threshold),
sequential importance sampling (smoothed indicator) and annealed importance
sampling (input scale). The two-parameter surface strategies live in
app.coupled and app.spherical; run_method dispatches on the method id.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.typing import NDArray

from app.config import AnnealedConfig, KernelConfig, RunConfig, SequentialConfig, SubsetConfig
from app.coremath import RandomStream
from app.errors import ConfigurationError, InitializationError, NonConvergenceError
from app.logger import get_logger
from app.problems import ReliabilityProblem
from app.ris import (
    LevelRecord,
    Relaxation,
    RunResult,
    adapt_quantile_lambda,
    adapt_weight_cov_lambda,
    chain_product,
)
from app.sampler import Stage

log = get_logger(__name__)


def _check_cap(levels: list[LevelRecord], max_levels: int, method: str) -> None:
    if len(levels) > max_levels:
        raise NonConvergenceError(f"{method}: exceeded {max_levels} levels before reaching the terminal stage")


def _result(method: str, problem: ReliabilityProblem, calls_before: int, levels: list[LevelRecord],
            curve: list[tuple[float, float]] | None = None) -> RunResult:
    return RunResult(method, levels, problem.calls - calls_before, chain_product(levels), curve or [])


def _normalized(log_w: NDArray[np.float64]) -> NDArray[np.float64]:
    finite = np.isfinite(log_w)
    if not finite.any():
        return np.zeros_like(log_w)
    return np.exp(log_w - log_w[finite].max())


# ----------------------------
# Subset simulation
# ----------------------------

def subset_simulation(
    problem: ReliabilityProblem,
    config: SubsetConfig,
    kernel: KernelConfig,
    rng: RandomStream,
    jobs: int = 1,
) -> RunResult:
    """
    Thresholds set at the p-quantile of G on each level; the retained
    ceil(p*N) samples below the next threshold seed its chains. The curve holds
    the discretized CDF of G: (threshold_j, P_j).
    """
    calls_before = problem.calls
    relax = Relaxation(problem, config.n_samples, kernel, rng, seed_fraction=config.p, jobs=jobs)
    if config.initial_threshold is None:
        first = Stage(threshold=math.inf)
    else:
        first = Stage(threshold=max(config.initial_threshold, 0.0))
    level = relax.initial(first, sample=first.threshold > 0.0)
    levels = [level]
    while level.stage.threshold > 0.0:
        _check_cap(levels, config.max_levels, "subset simulation")
        threshold = adapt_quantile_lambda(level.samples.g, config.p, terminal=0.0)
        level = relax.advance(level, Stage(threshold=threshold), sample=threshold > 0.0)
        levels.append(level)
    cdf = [(lv.stage.threshold, lv.probability) for lv in levels if math.isfinite(lv.stage.threshold)]
    return _result("ss", problem, calls_before, levels, cdf)


# ----------------------------
# Sequential importance sampling
# ----------------------------

def sequential_is(
    problem: ReliabilityProblem,
    config: SequentialConfig,
    kernel: KernelConfig,
    rng: RandomStream,
    jobs: int = 1,
) -> RunResult:
    """Smoothed indicator Phi(-G/lam) tightened by the weight-CoV rule down to the hard indicator."""
    calls_before = problem.calls
    relax = Relaxation(problem, config.n_samples, kernel, rng, jobs=jobs)
    smoothing = math.inf if config.initial_smoothing is None else config.initial_smoothing
    first = Stage(threshold=0.0, smoothing=smoothing)
    level = relax.initial(first, sample=smoothing > 0.0)
    levels = [level]
    while level.stage.smoothing > 0.0:
        _check_cap(levels, config.max_levels, "sequential importance sampling")
        cur = level.stage
        g = level.samples.g

        def weights(lam: float, cur: Stage = cur, g: NDArray[np.float64] = g) -> NDArray[np.float64]:
            return _normalized(Stage(threshold=0.0, smoothing=lam).log_relax(g) - cur.log_relax(g))

        upper = None
        if not math.isfinite(cur.smoothing):
            upper = 10.0 * max(float(np.max(np.abs(g))), 1e-12)
        lam = adapt_weight_cov_lambda(cur.smoothing, 0.0, weights, config.delta_target, upper=upper)
        level = relax.advance(level, Stage(threshold=0.0, smoothing=lam), sample=lam > 0.0)
        levels.append(level)
    return _result("sis", problem, calls_before, levels)


# ----------------------------
# Annealed importance sampling
# ----------------------------

def initial_scale_by_doubling(
    problem: ReliabilityProblem,
    rng: RandomStream,
    pilot_samples: int = 100,
    min_fraction: float = 0.05,
    cap: float = 64.0,
    threshold: float = 0.0,
) -> tuple[float, int]:
    """Smallest 2^k input scale whose crude-MC failure fraction reaches min_fraction; returns (scale, calls)."""
    gen = rng.generator()
    scale, calls = 1.0, 0
    while True:
        x = scale * gen.standard_normal((pilot_samples, problem.dimension))
        fraction = float(np.mean(problem.evaluate(x) <= threshold))
        calls += pilot_samples
        if fraction >= min_fraction:
            log.info("initial scale selected", extra={"scale": scale, "fraction": fraction, "calls": calls})
            return scale, calls
        scale *= 2.0
        if scale > cap:
            raise InitializationError(
                f"relaxed failure fraction stayed below {min_fraction} up to input scale {cap:g}"
            )


def annealed_is(
    problem: ReliabilityProblem,
    config: AnnealedConfig,
    kernel: KernelConfig,
    rng: RandomStream,
    jobs: int = 1,
) -> RunResult:
    """
    Input covariance I*lam^2 annealed from lam_1 down to 1. The curve holds the
    discretized fragility curve (lam_j, P_j).
    """
    calls_before = problem.calls
    relax = Relaxation(problem, config.n_samples, kernel, rng, jobs=jobs)
    pilot_calls = 0
    if config.initial_scale is None:
        scale, pilot_calls = initial_scale_by_doubling(
            problem, relax.stream(), config.pilot_samples, config.min_fraction, config.scale_cap,
        )
    else:
        scale = config.initial_scale
    level = relax.initial(Stage(pdf_scale=scale), sample=scale > 1.0)
    level.calls += pilot_calls
    levels = [level]
    while level.stage.pdf_scale > 1.0:
        _check_cap(levels, config.max_levels, "annealed importance sampling")
        cur = level.stage
        x = level.samples.x

        def weights(lam: float, cur: Stage = cur, x: NDArray[np.float64] = x) -> NDArray[np.float64]:
            return _normalized(Stage(pdf_scale=lam).log_prior(x) - cur.log_prior(x))

        lam = adapt_weight_cov_lambda(cur.pdf_scale, 1.0, weights, config.delta_target)
        level = relax.advance(level, Stage(pdf_scale=lam), sample=lam > 1.0)
        levels.append(level)
    curve = [(lv.stage.pdf_scale, lv.probability) for lv in levels]
    return _result("ais", problem, calls_before, levels, curve)


# ----------------------------
# Dispatch
# ----------------------------

def run_method(problem: ReliabilityProblem, config: RunConfig, rng: RandomStream, jobs: int = 1) -> RunResult:
    """One run of config.method on the problem, returning the point estimate P_f."""
    from app import coupled, oracle, spherical

    method = config.method
    if method == "ss":
        return subset_simulation(problem, config.subset, config.kernel, rng, jobs)
    if method == "sis":
        return sequential_is(problem, config.sequential, config.kernel, rng, jobs)
    if method == "ais":
        return annealed_is(problem, config.annealed, config.kernel, rng, jobs)
    if method == "is1":
        grid = coupled.is_one(problem, config.ranges, config.coupled, config.kernel, rng, jobs=jobs)
        return grid.as_run_result()
    if method == "is2":
        grid = spherical.is_two(problem, config.ranges, config.spherical, config.kernel, rng, jobs=jobs)
        return grid.as_run_result()
    if method == "dmc":
        calls_before = problem.calls
        mc = oracle.direct_mc(problem, config.dmc_samples, rng, jobs=jobs)
        return RunResult("dmc", [], problem.calls - calls_before, mc.probability)
    raise ConfigurationError(f"unknown method {method!r}")
