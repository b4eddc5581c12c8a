from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from app.coremath import (
    RandomStream,
    chi_log_pdf,
    halfspace_cap_ratio,
    regularized_incomplete_beta,
    sample_chi,
    sample_uniform_sphere,
    scaled_gaussian_log_pdf,
    std_normal_cdf,
    std_normal_inv_cdf,
)
from app.errors import DomainError


def test_stream_is_reproducible_and_children_differ():
    a = RandomStream(7, 3).generator().standard_normal(5)
    b = RandomStream(7, 3).generator().standard_normal(5)
    c = RandomStream(7, 3).child(0).generator().standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_rejects_negative_seed():
    with pytest.raises(DomainError):
        RandomStream(-1)


def test_normal_cdf_and_inverse():
    assert std_normal_cdf(0.0) == 0.5
    assert math.isclose(std_normal_cdf(-2.0), 2.275013194817921e-2, rel_tol=1e-12)
    assert math.isclose(float(std_normal_cdf(std_normal_inv_cdf(1e-6))), 1e-6, rel_tol=1e-12)
    for p in (0.0, 1.0, -0.1):
        with pytest.raises(DomainError):
            std_normal_inv_cdf(p)


def test_incomplete_beta_checks_domain():
    assert math.isclose(float(regularized_incomplete_beta(0.5, 1.0, 1.0)), 0.5)
    with pytest.raises(DomainError):
        regularized_incomplete_beta(1.5, 1.0, 1.0)
    with pytest.raises(DomainError):
        regularized_incomplete_beta(0.5, 0.0, 1.0)


def test_sphere_samples_have_unit_norm():
    u = sample_uniform_sphere(7, RandomStream(1), size=200)
    assert u.shape == (200, 7)
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)
    with pytest.raises(DomainError):
        sample_uniform_sphere(1, RandomStream(1))


def test_chi_density_matches_scipy():
    r = np.array([0.5, 3.0, 10.0])
    assert np.allclose(chi_log_pdf(r, 50), stats.chi.logpdf(r, 50))
    assert chi_log_pdf(-1.0, 5) == -math.inf
    radii = sample_chi(400, RandomStream(2), size=2000)
    assert abs(radii.mean() - math.sqrt(400)) < 0.1


def test_scaled_gaussian_log_pdf_matches_scipy():
    x = np.array([[0.3, -1.2, 2.0], [0.0, 0.0, 0.0]])
    expected = stats.multivariate_normal(np.zeros(3), 4.0 * np.eye(3)).logpdf(x)
    assert np.allclose(scaled_gaussian_log_pdf(x, 2.0), expected, rtol=1e-12)
    with pytest.raises(DomainError):
        scaled_gaussian_log_pdf(x, 0.0)


def test_cap_ratio_closed_forms():
    assert halfspace_cap_ratio(3.0, 3.0, 10) == 0.0
    assert math.isclose(halfspace_cap_ratio(0.0, 2.0, 10), 0.5)
    # on the circle the cap fraction is arccos(beta/r)/pi
    r = np.array([1.5, 2.0, 5.0])
    assert np.allclose(halfspace_cap_ratio(1.0, r, 2), np.arccos(1.0 / r) / math.pi, rtol=1e-10)


def test_sphere_times_chi_is_standard_normal():
    n, size = 5, 100_000
    x = sample_uniform_sphere(n, RandomStream(3), size=size) * sample_chi(n, RandomStream(4), size=size)[:, None]
    # first moments: size * |mean|^2 is chi-square with n degrees of freedom
    assert stats.chi2.sf(size * np.sum(x.mean(axis=0) ** 2), n) > 1e-3
    sq = np.sum(x * x, axis=1)
    assert abs(sq.mean() - n) <= 3.0 * sq.std(ddof=1) / math.sqrt(size)
    cov = np.cov(x, rowvar=False)
    assert np.allclose(cov, np.eye(n), atol=4.0 * math.sqrt(2.0 / size))
    assert stats.kstest(x @ (np.ones(n) / math.sqrt(n)), "norm").pvalue > 1e-3


def test_circle_directions_are_uniform():
    u = sample_uniform_sphere(2, RandomStream(5), size=100_000)
    angles = np.arctan2(u[:, 1], u[:, 0])
    counts, _ = np.histogram(angles, bins=36, range=(-math.pi, math.pi))
    assert stats.chisquare(counts).pvalue > 0.01


@pytest.mark.parametrize("n, beta, r", [(5, 1.0, 2.0), (50, 1.5, 10.0)])
def test_cap_ratio_matches_sphere_sampling(n, beta, r):
    size = 100_000
    u = sample_uniform_sphere(n, RandomStream(6), size=size)
    hit = float(np.mean(r * u[:, 0] >= beta))
    expected = float(halfspace_cap_ratio(beta, r, n))
    assert abs(hit - expected) <= 3.0 * math.sqrt(expected * (1.0 - expected) / size)
