"""
Bouc-Wen hysteretic oscillator and ground-motion excitation models.

The oscillator is integrated with a classical explicit RK4 over the coupled
(u, u_dot, z) state, vectorized across a batch of excitations so one call
serves every chain of a sampling level. Excitation between samples is taken
as the linear interpolant of the acceleration series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import constants, signal

from app.errors import ConfigurationError, DomainError, IntegrationError
from app.logger import get_logger

log = get_logger(__name__)

G = constants.g
BASE_PGA = 0.05 * G
DEFAULT_DT = 0.005
DEFAULT_DURATION = 30.0
WHITE_NOISE_S0 = 1.3e-4
WHITE_NOISE_OMEGA_MAX = 25.0 * math.pi
# firm-soil ground filter for the bundled records
KANAI_TAJIMI_OMEGA = 15.6
KANAI_TAJIMI_ZETA = 0.6

ExcitationKind = Literal["two-record", "spectral-white-noise", "synthetic-record"]


@dataclass(frozen=True)
class BoucWenParams:
    m: float = 3.0e5
    c: float = 5.0e7
    k: float = 3.0e7
    alpha: float = 0.1
    phi: float = 1.0
    varphi: float = 400.0
    psi: float = 400.0
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if not self.varphi + self.psi > 0.0:
            raise DomainError("varphi + psi must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.m <= 0.0 or self.k <= 0.0 or self.c < 0.0 or self.gamma <= 0.0:
            raise DomainError("mass, stiffness and exponent must be positive, damping non-negative")

    @property
    def u_y(self) -> float:
        return (self.varphi + self.psi) ** (-1.0 / self.gamma)


@dataclass(frozen=True, eq=False)
class ExcitationModel:
    kind: ExcitationKind
    dt: float = DEFAULT_DT
    duration: float = DEFAULT_DURATION
    records: tuple[NDArray[np.float64], NDArray[np.float64]] | None = None
    s0: float = WHITE_NOISE_S0
    omega_max: float = WHITE_NOISE_OMEGA_MAX
    n_vars: int = 2
    _basis: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def n_steps(self) -> int:
        if self.records is not None:
            return len(self.records[0])
        return int(round(self.duration / self.dt))

    def times(self) -> NDArray[np.float64]:
        return np.arange(self.n_steps) * self.dt


@dataclass
class BoucWenResponse:
    u: NDArray[np.float64]
    v: NDArray[np.float64]
    z: NDArray[np.float64]

    @property
    def peak_displacement(self) -> NDArray[np.float64]:
        return np.max(np.abs(self.u), axis=-1)


# ----------------------------
# Integration
# ----------------------------

def _derivatives(p: BoucWenParams, u, v, z, a):
    dv = -(p.c * v + p.alpha * p.k * u + (1.0 - p.alpha) * p.k * z) / p.m - a
    az = np.abs(z)
    if p.gamma == 1.0:
        dz = p.phi * v - p.varphi * np.abs(v) * z - p.psi * v * az
    else:
        zg = az ** p.gamma
        dz = p.phi * v - p.varphi * np.abs(v) * np.sign(z) * zg - p.psi * v * zg
    return v, dv, dz


def _integrate(
    params: BoucWenParams,
    accel: NDArray[np.float64],
    dt: float,
    keep_history: bool,
) -> tuple[BoucWenResponse | None, NDArray[np.float64]]:
    if not 0.0 < dt <= 0.01:
        raise DomainError(f"time step must lie in (0, 0.01] s, got {dt}")
    a = np.atleast_2d(np.asarray(accel, dtype=float))
    batch, steps = a.shape
    u = np.zeros(batch)
    v = np.zeros(batch)
    z = np.zeros(batch)
    peak = np.zeros(batch)
    hist = None
    if keep_history:
        hist = (np.zeros((batch, steps)), np.zeros((batch, steps)), np.zeros((batch, steps)))
    h2 = 0.5 * dt
    for step in range(steps - 1):
        a0 = a[:, step]
        a1 = a[:, step + 1]
        am = 0.5 * (a0 + a1)
        k1u, k1v, k1z = _derivatives(params, u, v, z, a0)
        k2u, k2v, k2z = _derivatives(params, u + h2 * k1u, v + h2 * k1v, z + h2 * k1z, am)
        k3u, k3v, k3z = _derivatives(params, u + h2 * k2u, v + h2 * k2v, z + h2 * k2z, am)
        k4u, k4v, k4z = _derivatives(params, u + dt * k3u, v + dt * k3v, z + dt * k3z, a1)
        u = u + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        v = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        z = z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        if not (np.isfinite(u).all() and np.isfinite(v).all() and np.isfinite(z).all()):
            raise IntegrationError("non-finite oscillator state", step + 1)
        np.maximum(peak, np.abs(u), out=peak)
        if hist is not None:
            hist[0][:, step + 1] = u
            hist[1][:, step + 1] = v
            hist[2][:, step + 1] = z
    response = BoucWenResponse(*hist) if hist is not None else None
    return response, peak


def integrate_bouc_wen(params: BoucWenParams, excitation: ArrayLike, dt: float = DEFAULT_DT) -> BoucWenResponse:
    """
    Solve m*u'' + c*u' + alpha*k*u + (1-alpha)*k*z = -m*a_g with the Bouc-Wen law
    for z, from rest. A 2-D excitation array is treated as a batch of series.
    """
    squeeze = np.ndim(excitation) == 1
    response, _ = _integrate(params, np.asarray(excitation, dtype=float), dt, keep_history=True)
    assert response is not None
    if squeeze:
        return BoucWenResponse(response.u[0], response.v[0], response.z[0])
    return response


def peak_displacement(params: BoucWenParams, excitation: ArrayLike, dt: float = DEFAULT_DT) -> NDArray[np.float64]:
    """max_t |u(t)| per series without storing the histories."""
    _, peak = _integrate(params, np.asarray(excitation, dtype=float), dt, keep_history=False)
    return peak


# ----------------------------
# Ground motion records
# ----------------------------

_SYNTHETIC_SEEDS = (1101, 1102)


def synthetic_record(
    seed: int,
    pga: float = BASE_PGA,
    dt: float = DEFAULT_DT,
    duration: float = DEFAULT_DURATION,
) -> NDArray[np.float64]:
    """
    Kanai-Tajimi filtered white noise under a build-up/strong-motion/decay
    envelope, scaled to pga. There is no low-cut: the long-period content is what
    drives the heavily damped benchmark oscillator.
    """
    steps = int(round(duration / dt))
    t = np.arange(steps) * dt
    rng = np.random.Generator(np.random.Philox(seed))
    two_zw = 2.0 * KANAI_TAJIMI_ZETA * KANAI_TAJIMI_OMEGA
    b, a = signal.bilinear([two_zw, KANAI_TAJIMI_OMEGA**2], [1.0, two_zw, KANAI_TAJIMI_OMEGA**2], fs=1.0 / dt)
    noise = signal.lfilter(b, a, rng.standard_normal(steps))
    envelope = np.where(t < 2.0, (t / 2.0) ** 2, np.where(t < 10.0, 1.0, np.exp(-0.25 * (t - 10.0))))
    record = noise * envelope
    return record * (pga / np.max(np.abs(record)))


def load_record(path: Path, pga: float | None = None) -> tuple[NDArray[np.float64], float]:
    """Read a two-column (time s, acceleration m/s^2) record; returns (series, dt)."""
    data = np.loadtxt(path, dtype=float, ndmin=2)
    if data.shape[1] != 2 or data.shape[0] < 2:
        raise ConfigurationError(f"record {path} must have two columns and at least two rows")
    steps = np.diff(data[:, 0])
    dt = float(steps[0])
    if dt <= 0.0 or not np.allclose(steps, dt, rtol=1e-6, atol=1e-9):
        raise ConfigurationError(f"record {path} is not uniformly sampled")
    series = data[:, 1].copy()
    if pga is not None:
        series *= pga / np.max(np.abs(series))
    return series, dt


def two_record_model(pga: float = BASE_PGA, records_dir: str | None = None) -> ExcitationModel:
    """Two-record excitation from RECORDS_DIR if given, otherwise the bundled synthetic pair."""
    if records_dir:
        first, dt1 = load_record(Path(records_dir) / "record_1.txt", pga)
        second, dt2 = load_record(Path(records_dir) / "record_2.txt", pga)
        if len(first) != len(second) or not math.isclose(dt1, dt2):
            raise ConfigurationError("the two records must share length and time step")
        log.info("loaded ground motion records", extra={"records_dir": records_dir, "dt": dt1, "steps": len(first)})
        return ExcitationModel(kind="two-record", dt=dt1, duration=dt1 * len(first), records=(first, second))
    records = tuple(synthetic_record(s, pga) for s in _SYNTHETIC_SEEDS)
    return ExcitationModel(kind="synthetic-record", records=records)  # type: ignore[arg-type]


def white_noise_model(n_vars: int = 1000, pga: float = BASE_PGA) -> ExcitationModel:
    if n_vars < 2 or n_vars % 2:
        raise DomainError(f"white-noise variable count must be even and >= 2, got {n_vars}")
    s0 = WHITE_NOISE_S0 * (pga / BASE_PGA) ** 2
    return ExcitationModel(kind="spectral-white-noise", s0=s0, n_vars=n_vars)


def two_record_excitation(x1: ArrayLike, x2: ArrayLike, model: ExcitationModel) -> NDArray[np.float64]:
    """x1 * record_1 + x2 * record_2; array-valued weights give a batch of series."""
    if model.kind not in ("two-record", "synthetic-record") or model.records is None:
        raise ConfigurationError("two-record excitation needs a model with both records loaded")
    first, second = model.records
    w1 = np.asarray(x1, dtype=float)[..., None]
    w2 = np.asarray(x2, dtype=float)[..., None]
    return w1 * first + w2 * second


def _spectral_basis(model: ExcitationModel) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    cached = model._basis.get("cos_sin")
    if cached is None:
        half = model.n_vars // 2
        d_omega = 2.0 * model.omega_max / model.n_vars
        omega = (np.arange(1, half + 1) - 0.5) * d_omega
        amp = math.sqrt(2.0 * model.s0 * d_omega)
        phase = np.outer(omega, model.times())
        cached = (amp * np.cos(phase), amp * np.sin(phase))
        model._basis["cos_sin"] = cached
    return cached


def spectral_excitation(x: ArrayLike, model: ExcitationModel) -> NDArray[np.float64]:
    """Spectral representation of band-limited white noise; first half of x drives cosines."""
    if model.kind != "spectral-white-noise":
        raise ConfigurationError(f"spectral excitation needs a white-noise model, got {model.kind}")
    arr = np.asarray(x, dtype=float)
    n = arr.shape[-1]
    if n % 2:
        raise DomainError(f"spectral excitation needs an even number of variables, got {n}")
    if n != model.n_vars:
        raise DomainError(f"model expects {model.n_vars} variables, got {n}")
    cos_basis, sin_basis = _spectral_basis(model)
    half = n // 2
    return arr[..., :half] @ cos_basis + arr[..., half:] @ sin_basis
