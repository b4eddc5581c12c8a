from __future__ import annotations

import math

import numpy as np
import pytest

from app.config import KernelConfig, SubsetConfig
from app.coremath import RandomStream
from app.errors import ConfigurationError, DegenerateLevelError, InitializationError
from app.problems import make_linear
from app.ris import (
    LevelRecord,
    adapt_quantile_lambda,
    adapt_weight_cov_lambda,
    chain_product,
    estimate_initial_level,
    estimate_ratio,
    log_mean_exp,
    replicate_and_cov,
    select_seeds,
    weight_cov,
)
from app.sampler import ChainState, Stage
from app.strategies import subset_simulation


def _draws(k: int = 5) -> ChainState:
    x = np.arange(2 * k, dtype=float).reshape(k, 2)
    return ChainState(x, x[:, 0])


def test_log_mean_exp():
    assert math.isclose(log_mean_exp(np.log([1.0, 3.0])), math.log(2.0), rel_tol=1e-12)
    assert log_mean_exp(np.array([])) == -math.inf
    assert log_mean_exp(np.array([-np.inf, -np.inf])) == -math.inf


def test_select_seeds_keeps_indicator_hits():
    gen = np.random.default_rng(0)
    log_w = np.array([0.0, -np.inf, 0.0, 0.0, -np.inf])
    seeds = select_seeds(_draws(), log_w, None, gen)
    assert np.array_equal(seeds.g, [0.0, 4.0, 6.0])


def test_select_seeds_caps_hits_without_replacement():
    gen = np.random.default_rng(0)
    log_w = np.array([0.0, -np.inf, 0.0, 0.0, -np.inf])
    seeds = select_seeds(_draws(), log_w, 2, gen)
    assert len(seeds) == 2
    assert set(seeds.g) <= {0.0, 4.0, 6.0}
    assert len(set(seeds.g)) == 2


def test_select_seeds_resamples_graded_weights():
    gen = np.random.default_rng(0)
    log_w = np.log([0.0, 0.0, 1.0, 0.0, 3.0])
    seeds = select_seeds(_draws(), log_w, 50, gen)
    assert len(seeds) == 50
    assert set(seeds.g) <= {4.0, 8.0}


def test_select_seeds_rejects_all_zero_weights():
    with pytest.raises(DegenerateLevelError):
        select_seeds(_draws(), np.full(5, -np.inf), None, np.random.default_rng(0))


def test_quantile_uses_lower_order_statistic():
    g = np.array([5.0, 1.0, 3.0, 2.0, 4.0])
    assert adapt_quantile_lambda(g, 0.4) == 2.0
    assert adapt_quantile_lambda(g, 0.1) == 1.0
    assert adapt_quantile_lambda(g, 0.2, terminal=1.5) == 1.5


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2])
def test_quantile_rejects_bad_probability(p):
    with pytest.raises(ConfigurationError):
        adapt_quantile_lambda(np.ones(10), p)


def test_weight_cov():
    assert weight_cov(np.ones(4)) == 0.0
    assert weight_cov(np.zeros(4)) == math.inf
    assert math.isclose(weight_cov(np.array([1.0, 3.0])), 0.5)


def test_weight_cov_rule_solves_for_target():
    # CoV of [1, 1 + d] is d / (2 + d): 0.5 at d = 2, i.e. lam = 8
    def weights(lam):
        return np.array([1.0, 1.0 + (10.0 - lam)])

    lam = adapt_weight_cov_lambda(10.0, 0.0, weights, 0.5)
    assert math.isclose(lam, 8.0, abs_tol=1e-9)


def test_weight_cov_rule_jumps_to_terminal():
    def weights(lam):
        return np.array([1.0, 1.0 + (10.0 - lam)])

    assert adapt_weight_cov_lambda(10.0, 0.0, weights, 0.9) == 0.0


def test_weight_cov_rule_degenerate():
    def weights(lam):
        return np.array([0.0, 0.0, 1.0])

    with pytest.raises(DegenerateLevelError):
        adapt_weight_cov_lambda(10.0, 0.0, weights, 0.5)


def test_weight_cov_rule_needs_finite_bracket():
    def weights(lam):
        return np.array([1.0, 1.0 + (10.0 - lam)])

    with pytest.raises(ConfigurationError):
        adapt_weight_cov_lambda(math.inf, 0.0, weights, 0.1)


def test_estimate_ratio():
    assert math.isclose(estimate_ratio(np.log([0.5, 0.25, 0.25, 0.0])), 0.25)
    with pytest.raises(DegenerateLevelError):
        estimate_ratio(np.full(3, -np.inf))


def test_chain_product_multiplies_level_ratios():
    stage = Stage()
    levels = [
        LevelRecord(0, stage, None, (math.log(0.1),), 100),
        LevelRecord(1, stage, None, (math.log(0.1), math.log(0.2)), 100),
    ]
    assert math.isclose(chain_product(levels), 0.02, rel_tol=1e-12)
    assert math.isclose(levels[-1].probability, 0.02, rel_tol=1e-12)
    assert math.isclose(levels[-1].ratio, 0.2, rel_tol=1e-12)


def test_initial_level_needs_enough_samples():
    with pytest.raises(ConfigurationError):
        estimate_initial_level(make_linear(2.0), Stage(), 50, RandomStream(1))


def test_initial_level_without_hits():
    with pytest.raises(InitializationError):
        estimate_initial_level(make_linear(50.0), Stage(), 1000, RandomStream(1))


def test_initial_level_is_crude_mc():
    problem = make_linear(1.0, 2)
    init = estimate_initial_level(problem, Stage(), 2000, RandomStream(3))
    x = RandomStream(3).generator().standard_normal((2000, 2))
    expected = np.mean(problem.evaluate(x) <= 0.0)
    assert math.isclose(init.probability, expected, rel_tol=1e-12)
    assert np.all(init.seeds.g <= 0.0)


def test_replication_needs_two_runs():
    with pytest.raises(ConfigurationError):
        replicate_and_cov(lambda rng: None, 1, seed=1)


def test_replications_audit_calls():
    kernel = KernelConfig()
    config = SubsetConfig(n_samples=300)
    problems = []

    def runner(rng):
        problem = make_linear(2.0, 2)
        problems.append(problem)
        return subset_simulation(problem, config, kernel, rng)

    stats = replicate_and_cov(runner, 3, seed=5)
    assert len(stats.estimates) == 3
    assert stats.cov >= 0.0
    for problem, result in zip(problems, stats.results):
        assert result.calls == problem.calls
        assert sum(lv.calls for lv in result.levels) == result.calls


def test_replications_do_not_depend_on_jobs():
    kernel = KernelConfig()
    config = SubsetConfig(n_samples=200)

    def runner(rng):
        return subset_simulation(make_linear(2.0, 2), config, kernel, rng)

    serial = replicate_and_cov(runner, 3, seed=9, jobs=1)
    threaded = replicate_and_cov(runner, 3, seed=9, jobs=3)
    assert serial.estimates == threaded.estimates
    assert serial.calls == threaded.calls
