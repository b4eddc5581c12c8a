from __future__ import annotations

import pytest

from app.config import CoupledConfig, KernelConfig, Ranges
from app.coremath import RandomStream
from app.problems import make_linear


@pytest.fixture
def kernel() -> KernelConfig:
    return KernelConfig()


@pytest.fixture
def rng() -> RandomStream:
    return RandomStream(7)


@pytest.fixture(scope="session")
def linear_surface():
    """IS-I grid on the 2-D linear problem, beta=2: P(eps, xi) = Phi((eps - 2)/xi)."""
    from app.coupled import is_one

    problem = make_linear(2.0, 2)
    grid = is_one(
        problem,
        Ranges(eps_max=1.0, xi_max=2.0),
        CoupledConfig(n_samples=500, grid_eps=3, grid_xi=3),
        KernelConfig(),
        RandomStream(11),
    )
    return problem, grid
