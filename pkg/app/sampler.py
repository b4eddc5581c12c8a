"""
MCMC kernels for the intermediate optimal importance densities.

Every intermediate density has the form

    eta(x) = S(G(s * x); eps, lam) * N(x; 0, xi^2 I)

where S is the hard indicator I(G <= eps) (lam == 0), the smoothed indicator
Phi((eps - G) / lam) (0 < lam < inf), or 1 (lam == inf). A Stage holds
(eps, lam, xi, s). Indicator stages are sampled with Gaussian-potential HMC
that rejects proposals leaving the support; smooth stages use a prior-preserving
crank (pCN) Metropolis step. Neither needs the gradient of G.

Chains advance in lockstep so each kernel step costs one batched limit-state
call for all chains. Each chain draws from its own stream, so splitting the
chains over threads reproduces the serial output exactly.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, replace
from functools import partial
from typing import Sequence, Union

import numpy as np
from numpy.typing import NDArray
from scipy import optimize

from app.config import KernelConfig
from app.coremath import RandomStream, log_std_normal_cdf, scaled_gaussian_log_pdf
from app.errors import ConfigurationError, ContractViolation, DomainError
from app.logger import get_logger
from app.problems import ReliabilityProblem
from app import worker

log = get_logger(__name__)

RowRng = Union[np.random.Generator, Sequence[np.random.Generator]]

_MIN_STEP = 1e-3
_MAX_LEAPFROG_STEP = 1.9
_MAX_CRANK_ANGLE = 0.5 * math.pi
_CARRY_FLOOR = 0.25


@dataclass(frozen=True)
class Stage:
    """One intermediate density of a relaxation schedule."""

    threshold: float = 0.0
    smoothing: float = 0.0
    pdf_scale: float = 1.0
    lsf_scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.smoothing >= 0.0:
            raise DomainError(f"smoothing must be >= 0, got {self.smoothing}")
        if not (self.pdf_scale > 0.0 and self.lsf_scale > 0.0):
            raise DomainError("pdf_scale and lsf_scale must be positive")

    @property
    def is_indicator(self) -> bool:
        return self.smoothing == 0.0 and self.threshold != math.inf

    @property
    def is_unrestricted(self) -> bool:
        return self.smoothing == math.inf or self.threshold == math.inf

    @property
    def is_terminal(self) -> bool:
        return self.threshold == 0.0 and self.smoothing == 0.0 and self.pdf_scale == 1.0 and self.lsf_scale == 1.0

    def log_relax(self, g: NDArray[np.float64]) -> NDArray[np.float64]:
        g = np.asarray(g, dtype=float)
        if self.is_unrestricted:
            return np.zeros_like(g)
        if self.smoothing == 0.0:
            return np.where(g <= self.threshold, 0.0, -np.inf)
        return log_std_normal_cdf((self.threshold - g) / self.smoothing)

    def log_prior(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return scaled_gaussian_log_pdf(x, self.pdf_scale)

    def describe(self) -> dict[str, float]:
        return {
            "threshold": self.threshold,
            "smoothing": self.smoothing,
            "pdf_scale": self.pdf_scale,
            "lsf_scale": self.lsf_scale,
        }


@dataclass
class ChainState:
    """Positions of k chains (rows) with G cached at the stage's lsf_scale."""

    x: NDArray[np.float64]
    g: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if self.x.shape[0] != self.g.shape[0]:
            raise DomainError("chain positions and cached G values disagree in length")

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, idx) -> "ChainState":
        return ChainState(self.x[idx].copy(), self.g[idx].copy())

    @classmethod
    def concat(cls, parts: Sequence["ChainState"]) -> "ChainState":
        return cls(np.concatenate([p.x for p in parts]), np.concatenate([p.g for p in parts]))


class Target:
    """A stage bound to a problem; counts the limit-state calls spent on it."""

    def __init__(self, stage: Stage, problem: ReliabilityProblem | None) -> None:
        self.stage = stage
        self.problem = problem
        self.calls = 0
        self._lock = threading.Lock()

    def evaluate(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.problem is None:
            return np.zeros(x.shape[0])
        scaled = x if self.stage.lsf_scale == 1.0 else self.stage.lsf_scale * x
        g = self.problem.evaluate(scaled)
        with self._lock:
            self.calls += x.shape[0]
        return g

    def satisfied(self, g: NDArray[np.float64]) -> NDArray[np.bool_]:
        return self.stage.log_relax(g) > -np.inf


# ----------------------------
# Kernels
# ----------------------------

def _generators(rng: RowRng | RandomStream, k: int) -> RowRng:
    if isinstance(rng, RandomStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if len(rng) != k:
        raise DomainError(f"need one generator per chain ({k}), got {len(rng)}")
    return rng


def _normal_rows(rng: RowRng, k: int, n: int) -> NDArray[np.float64]:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((k, n))
    return np.stack([gen.standard_normal(n) for gen in rng]) if k else np.zeros((0, n))


def _uniform_rows(rng: RowRng, k: int, low: float = 0.0, high: float = 1.0) -> NDArray[np.float64]:
    if isinstance(rng, np.random.Generator):
        return rng.uniform(low, high, size=k)
    return np.array([gen.uniform(low, high) for gen in rng])


def leapfrog_count(step_size: float, leapfrog_steps: int, min_trajectory: float = 0.0) -> int:
    """Leapfrog steps per trajectory, raised until step_size * steps >= min_trajectory."""
    if min_trajectory <= 0.0:
        return leapfrog_steps
    return max(leapfrog_steps, math.ceil(min_trajectory / step_size - 1e-9))


def _leapfrog(
    y0: NDArray[np.float64],
    p0: NDArray[np.float64],
    h: NDArray[np.float64],
    steps: int,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    # unit harmonic potential |y|^2 / 2; h holds one step per chain (column)
    y = y0.copy()
    p = p0 - 0.5 * h * y
    for step in range(steps):
        y = y + h * p
        if step < steps - 1:
            p = p - h * y
    p = p - 0.5 * h * y
    return y, p


def _energy_accept(
    y0: NDArray[np.float64],
    p0: NDArray[np.float64],
    y: NDArray[np.float64],
    p: NDArray[np.float64],
) -> NDArray[np.float64]:
    h0 = 0.5 * (np.sum(y0 * y0, axis=-1) + np.sum(p0 * p0, axis=-1))
    h1 = 0.5 * (np.sum(y * y, axis=-1) + np.sum(p * p, axis=-1))
    with np.errstate(invalid="ignore"):
        alpha = np.exp(np.minimum(h0 - h1, 0.0))
    return np.nan_to_num(alpha, nan=0.0)


def _hmc_draws(gens: RowRng, k: int, n: int) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """(momenta, step jitter, uniforms) for k chains."""
    if isinstance(gens, np.random.Generator):
        return gens.standard_normal((k, n)), gens.uniform(0.8, 1.2, size=k), gens.random(k)
    draws = [(gen.standard_normal(n), gen.uniform(0.8, 1.2), gen.random()) for gen in gens]
    p0 = np.stack([d[0] for d in draws]) if k else np.zeros((0, n))
    return p0, np.array([d[1] for d in draws]), np.array([d[2] for d in draws])


def _jittered(step_size: float, jitter: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.minimum(step_size * jitter, _MAX_LEAPFROG_STEP)[:, None]


def hmc_indicator_step(
    state: ChainState,
    xi: float,
    constraint: Target,
    rng: RowRng | RandomStream,
    step_size: float = 0.5,
    leapfrog_steps: int = 10,
    min_trajectory: float = 0.0,
) -> tuple[ChainState, NDArray[np.bool_], NDArray[np.float64]]:
    """
    One Metropolis-corrected leapfrog trajectory per chain under the potential
    |x|^2 / (2 xi^2). The limit state is evaluated only for proposals that pass
    the energy test; a proposal outside the support is rejected.

    Returns the new state, which chains moved, and the energy-test acceptance
    probability per chain. The last ignores support rejections.
    """
    if not constraint.satisfied(state.g).all():
        raise ContractViolation("HMC chain started outside the constraint support")
    k, n = state.x.shape
    p0, jitter, u = _hmc_draws(_generators(rng, k), k, n)
    y0 = state.x / xi
    y, p = _leapfrog(y0, p0, _jittered(step_size, jitter), leapfrog_count(step_size, leapfrog_steps, min_trajectory))
    alpha = _energy_accept(y0, p0, y, p)
    passed = u < alpha

    x_out = state.x.copy()
    g_out = state.g.copy()
    accepted = passed.copy()
    idx = np.flatnonzero(passed)
    if idx.size:
        proposal = xi * y[idx]
        g_prop = constraint.evaluate(proposal)
        inside = constraint.satisfied(g_prop)
        keep = idx[inside]
        x_out[keep] = proposal[inside]
        g_out[keep] = g_prop[inside]
        accepted[idx[~inside]] = False
    return ChainState(x_out, g_out), accepted, alpha


def mwg_smooth_step(
    state: ChainState,
    log_density: Target,
    rng: RowRng | RandomStream,
    correlation: float = 0.8,
) -> tuple[ChainState, NDArray[np.bool_], NDArray[np.float64]]:
    """
    Prior-crank step x' = c*x + sqrt(1-c^2)*xi*z, reversible w.r.t. N(0, xi^2 I),
    accepted on the ratio of the relaxation factor S(G) alone. correlation 0
    proposes an independent prior draw. Returns (state, moved, acceptance probability).
    """
    if not 0.0 <= correlation < 1.0:
        raise DomainError(f"correlation must lie in [0, 1), got {correlation}")
    k, n = state.x.shape
    gens = _generators(rng, k)
    if isinstance(gens, np.random.Generator):
        z = gens.standard_normal((k, n))
        u = gens.random(k)
    else:
        draws = [(gen.standard_normal(n), gen.random()) for gen in gens]
        z = np.stack([d[0] for d in draws]) if k else np.zeros((0, n))
        u = np.array([d[1] for d in draws])

    xi = log_density.stage.pdf_scale
    proposal = correlation * state.x + math.sqrt(1.0 - correlation * correlation) * xi * z
    g_prop = log_density.evaluate(proposal)
    current = log_density.stage.log_relax(state.g)
    if not np.isfinite(current).all():
        raise ContractViolation("pCN chain started where the target density vanishes")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_alpha = log_density.stage.log_relax(g_prop) - current
        accepted = np.log(u) < log_alpha
        alpha = np.nan_to_num(np.exp(np.minimum(log_alpha, 0.0)), nan=0.0)
    x_out = np.where(accepted[:, None], proposal, state.x)
    g_out = np.where(accepted, g_prop, state.g)
    return ChainState(x_out, g_out), accepted, alpha


@dataclass(frozen=True)
class Kernel:
    target: Target
    config: KernelConfig
    step_size: float

    @property
    def kind(self) -> str:
        return "hmc" if self.target.stage.smoothing == 0.0 else "pcn"

    @property
    def max_step(self) -> float:
        return _MAX_LEAPFROG_STEP if self.kind == "hmc" else _MAX_CRANK_ANGLE

    def with_step_size(self, step_size: float) -> "Kernel":
        return replace(self, step_size=float(np.clip(step_size, _MIN_STEP, self.max_step)))

    def step(self, state: ChainState, rng: RowRng) -> tuple[ChainState, NDArray[np.bool_], NDArray[np.float64]]:
        if self.kind == "hmc":
            return hmc_indicator_step(
                state,
                self.target.stage.pdf_scale,
                self.target,
                rng,
                self.step_size,
                self.config.leapfrog_steps,
                self.config.min_trajectory,
            )
        # the step size is the crank angle: correlation cos(angle)
        return mwg_smooth_step(state, self.target, rng, math.cos(min(self.step_size, _MAX_CRANK_ANGLE)))


def make_kernel(target: Target, config: KernelConfig, step_size: float | None = None) -> Kernel:
    return Kernel(target, config, config.step_size).with_step_size(step_size or config.step_size)


def _tune_hmc(kernel: Kernel, pilot: ChainState, rng: RandomStream, burn_in: int, target_accept: float) -> float:
    """
    Largest leapfrog step whose mean energy acceptance at the pilot positions
    reaches target_accept. The energy test does not involve G, so this spends no
    limit-state calls; momenta are drawn once and reused for every candidate step.
    """
    y0 = pilot.x / kernel.target.stage.pdf_scale
    k, n = y0.shape
    gens = [rng.child(i).generator() for i in range(k)]
    draws = [_hmc_draws(gens, k, n) for _ in range(burn_in)]

    def excess(step: float) -> float:
        steps = leapfrog_count(step, kernel.config.leapfrog_steps, kernel.config.min_trajectory)
        rates = []
        for p0, jitter, _ in draws:
            y, p = _leapfrog(y0, p0, _jittered(step, jitter), steps)
            rates.append(_energy_accept(y0, p0, y, p))
        return float(np.mean(rates)) - target_accept

    # scan down from the largest step; acceptance approaches 1 as the step shrinks
    grid = np.geomspace(kernel.max_step, _MIN_STEP, 25)
    above = None
    for step in grid:
        value = excess(float(step))
        if value >= 0.0:
            if above is None or value == 0.0:
                return float(step)
            return float(optimize.bisect(excess, float(step), above, xtol=1e-3 * float(step), maxiter=60))
        above = float(step)
    return _MIN_STEP


def _tune_pcn(kernel: Kernel, pilot: ChainState, rng: RandomStream, burn_in: int, target_accept: float) -> float:
    """Dual averaging of the crank angle on the pilot chains' mean acceptance probability."""
    gens = [rng.child(i).generator() for i in range(len(pilot))]
    mu = math.log(10.0 * kernel.step_size)
    gamma, t0, kappa = 0.05, 10.0, 0.75
    h_bar = 0.0
    log_step = math.log(kernel.step_size)
    log_step_avg = log_step
    state = pilot
    low, high = math.log(_MIN_STEP), math.log(kernel.max_step)
    for t in range(1, burn_in + 1):
        state, _, alpha = kernel.with_step_size(math.exp(log_step)).step(state, gens)
        rate = float(np.mean(alpha))
        h_bar = (1.0 - 1.0 / (t + t0)) * h_bar + (target_accept - rate) / (t + t0)
        log_step = min(max(mu - math.sqrt(t) / gamma * h_bar, low), high)
        eta = t ** (-kappa)
        log_step_avg = eta * log_step + (1.0 - eta) * log_step_avg
    return float(np.clip(math.exp(log_step_avg), _MIN_STEP, kernel.max_step))


def tune_step_size(kernel: Kernel, pilot: ChainState, rng: RandomStream, burn_in: int, target_accept: float) -> float:
    """Step size for a level, tuned on pilot chains whose states are discarded."""
    if burn_in <= 0 or len(pilot) == 0:
        return kernel.step_size
    if kernel.kind == "hmc":
        return _tune_hmc(kernel, pilot, rng, burn_in, target_accept)
    return _tune_pcn(kernel, pilot, rng, burn_in, target_accept)


# ----------------------------
# Chains
# ----------------------------

@dataclass
class ChainRun:
    samples: ChainState
    calls: int
    # mean Metropolis acceptance probability (energy test only for HMC)
    accept_rate: float
    step_size: float
    # fraction of steps that changed the state
    move_rate: float = float("nan")


def _split(k: int, parts: int) -> list[NDArray[np.intp]]:
    parts = max(1, min(parts, k))
    return [chunk for chunk in np.array_split(np.arange(k), parts) if chunk.size]


def run_chains(
    seeds: ChainState,
    kernel: Kernel,
    steps_per_chain: int | Sequence[int],
    rng: RandomStream,
    jobs: int = 1,
) -> ChainRun:
    """
    Advance each seed for its number of steps. Output is chain-major: chain i
    contributes its seed followed by its steps_per_chain[i] states. Chain i
    draws from rng.child(i), so the result does not depend on `jobs`.
    """
    k = len(seeds)
    if k == 0:
        raise ConfigurationError("cannot run MCMC without seed states")
    steps = np.broadcast_to(np.asarray(steps_per_chain, dtype=int), (k,)).copy()
    if (steps < 0).any():
        raise DomainError("steps per chain must be non-negative")
    offsets = np.concatenate(([0], np.cumsum(steps + 1)))
    total = int(offsets[-1])
    out_x = np.empty((total, seeds.x.shape[1]))
    out_g = np.empty(total)
    out_x[offsets[:-1]] = seeds.x
    out_g[offsets[:-1]] = seeds.g
    calls_before = kernel.target.calls
    moved = np.zeros(k, dtype=int)
    alpha_sum = np.zeros(k)
    n_steps = np.zeros(k, dtype=int)

    def run_group(chains: NDArray[np.intp]) -> None:
        gens = [rng.child(int(c)).generator() for c in chains]
        state = seeds[chains]
        for t in range(int(steps[chains].max(initial=0))):
            active = np.flatnonzero(steps[chains] > t)
            sub, accepted, alpha = kernel.step(state[active], [gens[a] for a in active])
            state.x[active] = sub.x
            state.g[active] = sub.g
            rows = offsets[chains[active]] + t + 1
            out_x[rows] = sub.x
            out_g[rows] = sub.g
            moved[chains[active]] += accepted
            alpha_sum[chains[active]] += alpha
            n_steps[chains[active]] += 1

    worker.gather_in_threads([partial(run_group, g) for g in _split(k, jobs)], jobs)
    total_steps = int(n_steps.sum())
    accept_rate = float(alpha_sum.sum() / total_steps) if total_steps else float("nan")
    move_rate = float(moved.sum() / total_steps) if total_steps else float("nan")
    return ChainRun(
        ChainState(out_x, out_g), kernel.target.calls - calls_before, accept_rate, kernel.step_size, move_rate,
    )


def populate(
    seeds: ChainState,
    target: Target,
    n_total: int,
    config: KernelConfig,
    rng: RandomStream,
    step_size: float | None = None,
    jobs: int = 1,
) -> ChainRun:
    """
    Grow seeds into n_total samples of the target: chains share the sample count
    as evenly as possible, seeds count as their chain's first state. The step
    size is tuned on a pilot subset of the seeds first; a carried-over step
    never starts below _CARRY_FLOOR times the configured one.
    """
    k = len(seeds)
    if k == 0:
        raise ConfigurationError("cannot populate a level without seed states")
    if k > n_total:
        seeds = seeds[np.arange(n_total)]
        k = n_total
    base, extra = divmod(n_total, k)
    lengths = base + (np.arange(k) < extra)
    start = max(step_size or config.step_size, _CARRY_FLOOR * config.step_size)
    kernel = make_kernel(target, config, start)
    calls_before = target.calls
    pilot = seeds[np.arange(min(config.pilot_chains, k))]
    tuned = tune_step_size(kernel, pilot, rng.child(0), config.burn_in, config.target_accept)
    kernel = kernel.with_step_size(tuned)
    run = run_chains(seeds, kernel, lengths - 1, rng.child(1), jobs)
    run.calls = target.calls - calls_before
    log.debug(
        "chains populated",
        extra={"chains": k, "samples": n_total, "kernel": kernel.kind, "step_size": kernel.step_size,
               "accept_rate": run.accept_rate, "move_rate": run.move_rate, "calls": run.calls},
    )
    return run
