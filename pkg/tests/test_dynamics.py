from __future__ import annotations

import numpy as np
import pytest
from scipy import signal

from app.dynamics import (
    BASE_PGA,
    G,
    BoucWenParams,
    ExcitationModel,
    integrate_bouc_wen,
    load_record,
    peak_displacement,
    spectral_excitation,
    synthetic_record,
    two_record_excitation,
    two_record_model,
    white_noise_model,
)
from app.errors import ConfigurationError, DomainError, IntegrationError


@pytest.fixture(scope="module")
def record():
    return synthetic_record(1101, duration=10.0)


def test_yield_displacement():
    assert BoucWenParams().u_y == pytest.approx(1.0 / 800.0)
    assert BoucWenParams(varphi=100.0, psi=100.0, gamma=2.0).u_y == pytest.approx(200.0 ** -0.5)


def test_params_validation():
    with pytest.raises(DomainError):
        BoucWenParams(alpha=1.5)
    with pytest.raises(DomainError):
        BoucWenParams(varphi=-1.0, psi=0.5)
    with pytest.raises(DomainError):
        BoucWenParams(m=0.0)


def test_synthetic_record_is_scaled_to_pga(record):
    assert len(record) == 2000
    assert np.max(np.abs(record)) == pytest.approx(BASE_PGA)
    assert np.array_equal(record, synthetic_record(1101, duration=10.0))


def test_linear_oscillator_matches_lsim(record):
    params = BoucWenParams(alpha=1.0)
    dt = 0.005
    t = np.arange(len(record)) * dt
    system = signal.lti([-1.0], [1.0, params.c / params.m, params.k / params.m])
    _, expected, _ = signal.lsim(system, record, t)
    response = integrate_bouc_wen(params, record, dt)
    assert np.max(np.abs(response.u)) == pytest.approx(np.max(np.abs(expected)), rel=1e-2)
    assert np.allclose(response.u, expected, atol=1e-2 * np.max(np.abs(expected)))


def test_linear_oscillator_scales_exactly(record):
    params = BoucWenParams(alpha=1.0)
    base, doubled = peak_displacement(params, np.stack([record, 2.0 * record]))
    assert doubled == pytest.approx(2.0 * base, rel=1e-10)


def test_hysteretic_response_stays_bounded(record):
    response = integrate_bouc_wen(BoucWenParams(), 5.0 * record)
    assert response.u.shape == record.shape
    assert np.all(np.isfinite(response.u))
    # z saturates at the yield displacement
    assert np.max(np.abs(response.z)) <= BoucWenParams().u_y * (1.0 + 1e-6)


def test_peak_matches_history(record):
    params = BoucWenParams()
    batch = np.stack([record, 0.5 * record])
    full = integrate_bouc_wen(params, batch)
    assert np.allclose(full.peak_displacement, peak_displacement(params, batch))


def test_time_step_bounds(record):
    with pytest.raises(DomainError):
        peak_displacement(BoucWenParams(), record, dt=0.02)


def test_non_finite_state_reports_step():
    accel = np.zeros(10)
    accel[1] = np.inf
    with np.errstate(invalid="ignore", over="ignore"):
        with pytest.raises(IntegrationError) as exc:
            peak_displacement(BoucWenParams(), accel)
    assert exc.value.step == 1


def test_load_record(tmp_path):
    t = np.arange(5) * 0.01
    path = tmp_path / "record.txt"
    np.savetxt(path, np.column_stack([t, [0.0, 1.0, -2.0, 0.5, 0.0]]))
    series, dt = load_record(path, pga=4.0)
    assert dt == pytest.approx(0.01)
    assert np.allclose(series, [0.0, 2.0, -4.0, 1.0, 0.0])

    uneven = tmp_path / "uneven.txt"
    np.savetxt(uneven, np.column_stack([[0.0, 0.01, 0.03], [0.0, 1.0, 0.0]]))
    with pytest.raises(ConfigurationError):
        load_record(uneven)


def test_two_record_excitation(record):
    model = ExcitationModel(kind="two-record", records=(record, -record))
    batch = two_record_excitation(np.array([1.0, 2.0]), np.array([0.0, 1.0]), model)
    assert batch.shape == (2, len(record))
    assert np.allclose(batch[1], record)
    with pytest.raises(ConfigurationError):
        two_record_excitation(1.0, 1.0, white_noise_model(4))


def test_spectral_excitation_is_linear():
    model = white_noise_model(10)
    x = np.random.default_rng(0).standard_normal((3, 10))
    a = spectral_excitation(x, model)
    assert a.shape == (3, model.n_steps)
    assert np.allclose(spectral_excitation(2.0 * x, model), 2.0 * a)
    assert np.allclose(spectral_excitation(np.zeros(10), model), 0.0)
    with pytest.raises(DomainError):
        spectral_excitation(np.zeros(8), model)
    with pytest.raises(DomainError):
        white_noise_model(7)


def test_halving_the_time_step_keeps_the_peak(record):
    params = BoucWenParams()
    dt = 0.005
    strong = 6.0 * record
    t = np.arange(len(strong)) * dt
    fine_t = np.arange(2 * len(strong) - 1) * (dt / 2.0)
    fine = np.interp(fine_t, t, strong)
    coarse_peak = peak_displacement(params, strong, dt)[0]
    fine_peak = peak_displacement(params, fine, dt / 2.0)[0]
    assert coarse_peak > params.u_y
    assert abs(fine_peak / coarse_peak - 1.0) < 2e-3


def test_bundled_records_stay_elastic_at_base_intensity():
    model = two_record_model()
    assert all(len(r) == 6000 for r in model.records)
    assert np.array_equal(model.records[0], synthetic_record(1101))
    assert not np.array_equal(model.records[0], model.records[1])
    peaks = peak_displacement(BoucWenParams(), np.stack(model.records))
    # below yield at 0.05g, well above it at 8 x 0.05g
    assert np.all((peaks > 1e-4) & (peaks < BoucWenParams().u_y))
    strong = peak_displacement(BoucWenParams(), 8.0 * np.stack(model.records))
    assert np.all(strong > BoucWenParams().u_y)


@pytest.mark.slow
def test_white_noise_mean_pga_is_base_intensity():
    model = white_noise_model(1000)
    x = np.random.default_rng(10).standard_normal((500, 1000))
    pga = np.max(np.abs(spectral_excitation(x, model)), axis=1)
    assert pga.mean() == pytest.approx(0.05 * G, rel=0.1)
