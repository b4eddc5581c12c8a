from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import optimize

from app.config import KernelConfig, Ranges, SphericalConfig
from app.coremath import RandomStream, halfspace_cap_ratio
from app.errors import RangeError
from app.oracle import scaled_linear_surface
from app.problems import make_linear
from app.spherical import is_two, is_two_query, predict_next_xi

BETA = 3.0
N = 20


@pytest.fixture(scope="module")
def linear_spherical():
    problem = make_linear(BETA, N)
    grid = is_two(
        problem,
        Ranges(eps_max=1.0, xi_max=3.0),
        SphericalConfig(n_samples=500, grid_eps=2, grid_xi=3),
        KernelConfig(),
        RandomStream(13),
    )
    return problem, grid


def test_predict_next_xi_matches_halfspace_geometry():
    radius = math.sqrt(2)
    xi = 4.0
    p = float(halfspace_cap_ratio(3.0, xi * radius, 2))
    config = SphericalConfig(rho=0.25)
    got = predict_next_xi([(xi * radius, p)], xi, p, config, 2)

    def gap(s):
        return halfspace_cap_ratio(3.0, s * radius, 2) / p - 0.25

    assert math.isclose(got, optimize.brentq(gap, 1.0, xi, xtol=1e-12), rel_tol=1e-6)


def test_predict_next_xi_falls_back_across_branches():
    config = SphericalConfig(rho=0.25, fallback_factor=0.8)
    assert predict_next_xi([(5.0, 0.6)], 3.0, 0.6, config, 2) == pytest.approx(2.4)
    assert predict_next_xi([(5.0, 0.6)], 1.1, 0.6, config, 2) == 1.0


def test_predict_next_xi_falls_back_when_fit_fails():
    # one high-branch point cannot fix both the radius and the shift
    config = SphericalConfig(rho=0.6, fallback_factor=0.8)
    assert predict_next_xi([(5.0, 0.9)], 3.0, 0.9, config, 2) == pytest.approx(2.4)


def test_nodes_sit_on_the_grid(linear_spherical):
    _, grid = linear_spherical
    assert grid.missing() == []
    assert len(grid.rows) == len(grid.eps_axis)
    for (i, j), node in grid.nodes.items():
        eps, xi = grid.eps_axis[i], grid.xi_axis[j]
        assert node.stage.threshold == eps
        assert node.stage.lsf_scale == xi
        assert node.stage.pdf_scale == 1.0
        assert 0.0 < node.probability <= 1.0


def test_terminal_estimate(linear_spherical):
    problem, grid = linear_spherical
    result = grid.as_run_result()
    assert result.method == "is2"
    assert grid.terminal.stage.is_terminal
    assert result.estimate == grid.terminal.probability
    assert result.calls == problem.calls


def test_queries_use_the_ratio_model(linear_spherical):
    problem, grid = linear_spherical
    before = problem.calls
    assert grid.query(0.0, 1.0) == grid.terminal.probability
    for eps, xi in [(0.5, 2.5), (1.0, 1.5), (0.2, 1.2)]:
        assert 0.0 < grid.query(eps, xi) <= 1.0
    assert problem.calls == before


def test_cell_query_bounds(linear_spherical):
    _, grid = linear_spherical
    cell = grid.spherical_cell(grid.cell(0, 0))
    assert is_two_query(cell, cell.cell.eps_hi, cell.cell.xi_hi) == grid.probability(0, 0)
    with pytest.raises(RangeError):
        is_two_query(cell, 0.5, 1.2)


def test_is_two_collapsed_range_is_crude_mc(kernel, rng):
    problem = make_linear(1.0, 5)
    grid = is_two(problem, Ranges(eps_max=0.0, xi_max=1.0), SphericalConfig(n_samples=1000), kernel, rng)
    assert grid.shape == (1, 1)
    x = rng.child(0).generator().standard_normal((1000, 5))
    expected = np.mean(make_linear(1.0, 5).evaluate(x) <= 0.0)
    assert math.isclose(grid.terminal.probability, expected, rel_tol=1e-12)
    assert grid.calls == 1000


def _replicate_is_two(beta, n, ranges, config, reps, seed):
    return [is_two(make_linear(beta, n), ranges, config, KernelConfig(), RandomStream(seed, r)) for r in range(reps)]


def _mean_and_se(values):
    values = np.asarray(values)
    return values.mean(), values.std(ddof=1) / math.sqrt(len(values))


@pytest.mark.slow
def test_replicated_nodes_and_queries_match_closed_form():
    grids = _replicate_is_two(BETA, N, Ranges(eps_max=1.0, xi_max=3.0),
                              SphericalConfig(n_samples=500, grid_eps=2, grid_xi=3), 12, 41)
    first = grids[0]
    for (i, j) in first.nodes:
        mean, se = _mean_and_se([g.probability(i, j) for g in grids])
        assert abs(mean - scaled_linear_surface(first.eps_axis[i], first.xi_axis[j], BETA)) <= 3.0 * se
    for eps, xi in np.random.default_rng(6).uniform([0.0, 1.0], [1.0, 3.0], size=(50, 2)):
        truth = scaled_linear_surface(eps, xi, BETA)
        mean, se = _mean_and_se([g.query(eps, xi) for g in grids])
        assert abs(mean - truth) <= max(3.0 * se, 0.1 * truth)


@pytest.mark.slow
def test_high_dimensional_off_grid_queries():
    grids = _replicate_is_two(BETA, 1000, Ranges(eps_max=1.0, xi_max=3.0),
                              SphericalConfig(n_samples=500, grid_eps=2, grid_xi=3), 8, 43)
    assert all(g.dimension == 1000 for g in grids)
    for eps, xi in [(0.5, 2.5), (0.25, 1.5), (0.8, 1.2), (0.1, 2.2)]:
        truth = scaled_linear_surface(eps, xi, BETA)
        mean, se = _mean_and_se([g.query(eps, xi) for g in grids])
        assert abs(mean - truth) <= max(3.0 * se, 0.1 * truth)
    mean, se = _mean_and_se([g.terminal.probability for g in grids])
    assert abs(mean - scaled_linear_surface(0.0, 1.0, BETA)) <= 3.0 * se
