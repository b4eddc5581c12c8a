"""
Reference values: crude Monte Carlo and closed-form oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app import worker
from app.coremath import RandomStream, halfspace_cap_ratio, std_normal_cdf
from app.errors import ConfigurationError, UnknownOracleError
from app.logger import get_logger
from app.problems import ReliabilityProblem

log = get_logger(__name__)

DEFAULT_BATCH = 100_000
# rows * dimension per batch
_MAX_BATCH_ENTRIES = 10_000_000


@dataclass(frozen=True)
class DirectMCResult:
    probability: float
    cov: float | None
    hits: int
    n: int
    flagged: bool = False

    @property
    def standard_error(self) -> float | None:
        return None if self.cov is None else self.cov * self.probability


def _count_hits(problem: ReliabilityProblem, size: int, rng: RandomStream) -> int:
    x = rng.generator().standard_normal((size, problem.dimension))
    return int(np.count_nonzero(problem.evaluate(x) <= 0.0))


def direct_mc(
    problem: ReliabilityProblem,
    n_samples: int,
    rng: RandomStream,
    batch_size: int = DEFAULT_BATCH,
    jobs: int = 1,
) -> DirectMCResult:
    """
    Hit fraction of G(x) <= 0 over n_samples standard normal draws. Batch b
    draws from stream rng.child(b); batching depends only on the dimension, so
    the estimate does not depend on `jobs`.
    """
    if n_samples < 1:
        raise ConfigurationError(f"direct Monte Carlo needs at least one sample, got {n_samples}")
    size = max(1, min(batch_size, _MAX_BATCH_ENTRIES // problem.dimension))
    sizes = [min(size, n_samples - start) for start in range(0, n_samples, size)]
    hits = sum(worker.gather_in_threads(
        [partial(_count_hits, problem, s, rng.child(b)) for b, s in enumerate(sizes)], jobs
    ))
    p = hits / n_samples
    if hits == 0:
        log.warning("direct Monte Carlo saw no failures; CoV undefined",
                    extra={"problem": problem.name, "samples": n_samples})
        return DirectMCResult(0.0, None, 0, n_samples, flagged=True)
    cov = math.sqrt((1.0 - p) / (n_samples * p))
    log.info("direct Monte Carlo", extra={"problem": problem.name, "samples": n_samples, "probability": p, "cov": cov})
    return DirectMCResult(p, cov, hits, n_samples)


# ----------------------------
# Closed forms
# ----------------------------

def linear_halfspace(beta: float) -> float:
    """P(beta - e.x <= 0) for standard normal x and unit e."""
    return float(std_normal_cdf(-beta))


def scaled_linear_surface(eps: ArrayLike, xi: ArrayLike, beta: float) -> NDArray[np.float64] | float:
    """P(G <= eps) under N(0, xi^2 I) for the linear limit state: Phi((eps - beta)/xi)."""
    out = std_normal_cdf((np.asarray(eps, dtype=float) - beta) / np.asarray(xi, dtype=float))
    return out if np.ndim(out) else float(out)


def cap_ratio(beta: float, r: ArrayLike, n: int) -> NDArray[np.float64] | float:
    out = halfspace_cap_ratio(beta, r, n)
    return out if np.ndim(out) else float(out)


ORACLES: dict[str, Callable[..., Any]] = {
    "linear-halfspace": linear_halfspace,
    "scaled-linear-surface": scaled_linear_surface,
    "halfspace-cap-ratio": cap_ratio,
}


def analytic_oracles(case: str, **params: Any) -> Any:
    try:
        oracle = ORACLES[case]
    except KeyError:
        raise UnknownOracleError(f"unknown oracle case {case!r}; known: {sorted(ORACLES)}") from None
    return oracle(**params)
