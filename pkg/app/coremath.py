"""
Special functions and seeded sampling primitives shared by every module.

All random draws go through RandomStream: a (seed, stream_id) pair mapped onto a
counter-based Philox generator, so streams can be handed to threads and two runs
with the same pair draw bit-identical sequences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special, stats

from app.errors import DomainError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class RandomStream:
    """Value-like handle on an independent random stream.

    Children derived with child(i) get their own spawn key, so sibling streams
    are statistically independent regardless of how many draws each makes.
    """

    seed: int
    stream_id: int = 0
    lineage: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.seed < 0 or self.stream_id < 0:
            raise DomainError("seed and stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.lineage + (self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, stream_id: int) -> "RandomStream":
        return RandomStream(self.seed, stream_id, self.lineage + (self.stream_id,))


RngLike = Union[RandomStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RandomStream):
        return rng.generator()
    return rng


def std_normal_cdf(x: ArrayLike) -> NDArray[np.float64] | float:
    """Standard normal CDF (erfc route, accurate far into the lower tail)."""
    return special.ndtr(x)


def log_std_normal_cdf(x: ArrayLike) -> NDArray[np.float64] | float:
    return special.log_ndtr(x)


def std_normal_inv_cdf(p: ArrayLike) -> NDArray[np.float64] | float:
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise DomainError(f"inverse normal CDF needs 0 < p < 1, got {p!r}")
    return special.ndtri(p)


def regularized_incomplete_beta(x: ArrayLike, a: float, b: float) -> NDArray[np.float64] | float:
    """I_x(a, b); B(.) in the failure-ratio model is this normalized form."""
    arr = np.asarray(x, dtype=float)
    if not (a > 0.0 and b > 0.0):
        raise DomainError(f"incomplete beta needs a > 0 and b > 0, got a={a}, b={b}")
    if np.any(~(arr >= 0.0) | ~(arr <= 1.0)):
        raise DomainError("incomplete beta argument must lie in [0, 1]")
    return special.betainc(a, b, x)


def sample_uniform_sphere(n: int, rng: RngLike, size: int | None = None) -> NDArray[np.float64]:
    """Uniform direction(s) on S^{n-1}: normalized standard normal vectors."""
    if n < 2:
        raise DomainError(f"sphere sampling needs n >= 2, got {n}")
    gen = as_generator(rng)
    shape = (n,) if size is None else (size, n)
    z = gen.standard_normal(shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def chi_log_pdf(r: ArrayLike, n: int) -> NDArray[np.float64] | float:
    if n < 1:
        raise DomainError(f"chi distribution needs n >= 1, got {n}")
    arr = np.asarray(r, dtype=float)
    out = np.where(arr > 0.0, stats.chi.logpdf(np.where(arr > 0.0, arr, 1.0), n), -np.inf)
    return out if out.ndim else float(out)


def sample_chi(n: int, rng: RngLike, size: int | None = None) -> NDArray[np.float64] | float:
    """Chi(n) radius realized as the norm of n independent standard normals."""
    if n < 1:
        raise DomainError(f"chi distribution needs n >= 1, got {n}")
    gen = as_generator(rng)
    shape = (n,) if size is None else (size, n)
    r = np.linalg.norm(gen.standard_normal(shape), axis=-1)
    return r if size is not None else float(r)


def scaled_gaussian_log_pdf(x: ArrayLike, xi: float) -> NDArray[np.float64] | float:
    """log N(x; 0, xi^2 I) over the last axis of x."""
    if not xi > 0.0:
        raise DomainError(f"Gaussian scale must be positive, got {xi}")
    arr = np.asarray(x, dtype=float)
    n = arr.shape[-1]
    sq = np.sum(arr * arr, axis=-1)
    return -n * (math.log(xi) + _LOG_SQRT_2PI) - sq / (2.0 * xi * xi)


def halfspace_cap_ratio(beta: float, r: ArrayLike, n: int) -> NDArray[np.float64] | float:
    """Area fraction of the radius-r sphere beyond a hyperplane at distance beta >= 0."""
    arr = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.clip(1.0 - (beta / arr) ** 2, 0.0, 1.0)
    out = np.where(arr > beta, 0.5 * special.betainc((n - 1) / 2.0, 0.5, x), 0.0)
    return out if out.ndim else float(out)
