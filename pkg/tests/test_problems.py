from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from app.config import CoupledConfig, KernelConfig, Ranges
from app.coremath import RandomStream
from app.dynamics import BASE_PGA
from app.errors import ConfigurationError, DomainError
from app.problems import (
    FragilityAxes,
    linear_lsf,
    make_linear,
    make_parabolic,
    make_seismic_two_record,
    parabolic_lsf,
    parse_problem,
)


def test_parabolic_limit_state():
    assert parabolic_lsf([0.1, 0.0], 5.0) == 5.0
    assert parabolic_lsf([1.1, 1.0], 5.0) == pytest.approx(3.5)
    batch = parabolic_lsf(np.array([[0.1, 0.0], [0.1, 5.0]]), 5.0)
    assert np.array_equal(batch, [5.0, 0.0])
    with pytest.raises(DomainError):
        parabolic_lsf([1.0, 2.0, 3.0], 5.0)


def test_linear_limit_state():
    e = np.array([0.6, 0.8])
    assert linear_lsf([3.0, 4.0], 5.0, e) == pytest.approx(0.0)
    with pytest.raises(DomainError):
        linear_lsf([1.0, 1.0], 2.0, [1.0, 1.0])
    with pytest.raises(DomainError):
        make_linear(2.0, 3, e=[1.0, 0.0])


def test_call_counter():
    problem = make_parabolic(5.0)
    problem.evaluate(np.zeros((5, 2)))
    problem([0.0, 0.0])
    assert problem.calls == 6
    problem.evaluate(np.zeros((0, 2)))
    assert problem.calls == 6
    problem.reset_calls()
    assert problem.calls == 0


def test_batch_shape_is_checked():
    problem = make_linear(2.0, 3)
    with pytest.raises(DomainError):
        problem.evaluate(np.zeros((4, 2)))
    with pytest.raises(DomainError):
        problem.evaluate(np.zeros(3))


def test_row_values_do_not_depend_on_batch():
    problem = make_linear(2.0, 7)
    x = np.random.default_rng(1).standard_normal((9, 7))
    whole = problem.evaluate(x)
    rows = np.array([problem(row) for row in x])
    assert np.array_equal(whole, rows)


def test_fragility_axes():
    axes = FragilityAxes(base_intensity=0.05, capacity=0.0025)
    assert np.allclose(axes.intensity([1.0, 8.0]), [0.05, 0.4])
    assert np.allclose(axes.threshold([0.0, 0.00125]), [0.0025, 0.00125])
    assert np.array_equal(FragilityAxes().threshold([0.5]), [0.5])


@pytest.mark.parametrize(
    "text, name, dimension",
    [
        ("parabolic:d=7", "parabolic:d=7", 2),
        ("parabolic", "parabolic:d=5", 2),
        ("linear:beta=3,n=5", "linear:beta=3,n=5", 5),
    ],
)
def test_parse_analytic_problems(text, name, dimension):
    problem = parse_problem(text)
    assert problem.name == name
    assert problem.dimension == dimension


@pytest.mark.parametrize("text", ["nope:x=1", "linear:gamma=2", "linear:beta", "parabolic:d=abc"])
def test_parse_problem_errors(text):
    with pytest.raises(ConfigurationError):
        parse_problem(text)


def test_seismic_two_record_problem():
    problem = parse_problem("seismic2d:b=0.003,pga=0.1")
    assert problem.dimension == 2
    assert problem.axes.capacity == 0.003
    assert problem.axes.base_intensity == pytest.approx(0.1)
    assert problem.axes.unit == pytest.approx(1.0 / 800.0)
    # no ground motion, no response
    assert problem([0.0, 0.0]) == 0.003
    g = problem.evaluate(np.array([[1.0, 0.0], [2.0, 0.0]]))
    assert g[1] < g[0] < 0.003


def test_seismic_white_noise_problem():
    problem = parse_problem("seismic-wn:n=10,pga=0.05")
    assert problem.dimension == 10
    assert problem.axes.capacity == pytest.approx(2.0 / 800.0)
    assert problem(np.zeros(10)) == pytest.approx(2.0 / 800.0)


@pytest.mark.slow
def test_seismic_surface_nodes_are_monotone():
    from app.coupled import is_one

    problem = parse_problem("seismic2d:b=0.0025,pga=0.05")
    grid = is_one(
        problem,
        Ranges(eps_max=0.00125, xi_max=4.0),
        CoupledConfig(n_samples=200, grid_eps=2, grid_xi=2),
        KernelConfig(),
        RandomStream(17),
    )
    p = grid.probabilities()
    assert np.all(np.isfinite(p))
    # larger threshold offset and larger intensity both relax the event
    assert p[0, 0] >= p[1, 0] and p[0, 0] >= p[0, 1]
    assert 0.0 < grid.terminal.probability < 1.0
    assert math.isclose(grid.axes.intensity(4.0), 0.2)


# (threshold row, intensity column) on the default 6 x 8 grid
SEISMIC_NODES = ((0, 7), (0, 5), (2, 6), (3, 3), (5, 0), (5, 3))
SEISMIC_REPS = 6


@pytest.mark.slow
def test_seismic_surface_agrees_with_direct_mc():
    from app.coupled import is_one
    from app.oracle import direct_mc

    ranges = Ranges(eps_max=0.00125, xi_max=8.0)
    grids = [
        is_one(parse_problem("seismic2d:b=0.0025,pga=0.05"), ranges, CoupledConfig(), KernelConfig(), RandomStream(23, r))
        for r in range(SEISMIC_REPS)
    ]
    for grid in grids:
        assert grid.shape == (6, 8)
        assert grid.missing() == []
        assert grid.calls <= 2 * 3700
        p = grid.probabilities()
        assert np.all((p > 0.0) & (p <= 1.0))

    # 3 standard errors, widened to the t quantile of the same coverage for the replication count
    limit = stats.t.ppf(stats.norm.cdf(3.0), SEISMIC_REPS - 1)
    first = grids[0]
    for i, j in SEISMIC_NODES:
        eps, xi = float(first.eps_axis[i]), float(first.xi_axis[j])
        # P(G(x) <= eps) under N(0, xi^2 I) is the base problem at capacity b - eps and PGA xi * 0.05g
        reference = direct_mc(make_seismic_two_record(b=0.0025 - eps, pga=xi * BASE_PGA), 100_000, RandomStream(29, i * 8 + j))
        assert reference.hits > 0
        values = np.array([g.probability(i, j) for g in grids])
        se = math.hypot(values.std(ddof=1) / math.sqrt(SEISMIC_REPS), reference.standard_error)
        assert abs(values.mean() - reference.probability) <= limit * se
