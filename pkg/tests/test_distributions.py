import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from enspost.distributions import (
    DistributionKind,
    PredictiveDistribution,
    crps_normal,
    crps_truncated_normal,
)
from enspost.scoring import ks_distance

from conftest import crps_by_quadrature, random_case, reference_cdf, support_lower

ALL_KINDS = list(DistributionKind)


def make(kind, location, scale):
    return PredictiveDistribution(kind=kind, location=location, scale=scale)


# -- construction -------------------------------------------------------------

def test_scale_must_be_positive():
    with pytest.raises(ValueError):
        make(DistributionKind.NORMAL, 0.0, 0.0)
    with pytest.raises(ValueError):
        make(DistributionKind.NORMAL, 0.0, -1.0)


def test_gamma_requires_positive_location():
    with pytest.raises(ValueError):
        make(DistributionKind.GAMMA, -2.0, 1.0)
    with pytest.raises(ValueError):
        make(DistributionKind.GAMMA, 0.0, 1.0)


# -- cdf -----------------------------------------------------------------------

def test_cdf_standard_normal_at_zero():
    assert make(DistributionKind.NORMAL, 0.0, 1.0).cdf(0.0) == pytest.approx(0.5)


def test_cdf_truncated_zero_at_support_boundary():
    assert make(DistributionKind.TRUNCATED_NORMAL, 1.0, 1.0).cdf(0.0) == 0.0
    assert make(DistributionKind.TRUNCATED_NORMAL, 1.0, 1.0).cdf(-3.0) == 0.0


def test_cdf_normal_one_sigma():
    # Phi(1), cross-checked below against integration of the density
    dist = make(DistributionKind.NORMAL, 2.0, 3.0)
    assert dist.cdf(5.0) == pytest.approx(0.841345, abs=1e-6)
    quad, _ = integrate.quad(dist.pdf, -np.inf, 5.0)
    assert dist.cdf(5.0) == pytest.approx(quad, abs=1e-9)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_cdf_matches_integrated_density(kind, rng):
    for _ in range(10):
        location, scale, y = random_case(kind, rng)
        dist = make(kind, max(location, 0.3) if kind is DistributionKind.GAMMA else location, scale)
        lower = support_lower(kind)
        quad, _ = integrate.quad(dist.pdf, lower, max(y, lower), limit=300)
        assert dist.cdf(y) == pytest.approx(quad, abs=1e-7)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_cdf_monotone_with_limits(kind):
    dist = make(kind, 3.0, 2.0)
    grid = np.linspace(-5.0, 30.0, 200)
    values = np.array([dist.cdf(g) for g in grid])
    assert np.all(np.diff(values) >= -1e-12)
    assert values[0] >= 0.0 and values[-1] <= 1.0
    assert dist.cdf(-1e9) == pytest.approx(0.0, abs=1e-12)
    assert dist.cdf(1e9) == pytest.approx(1.0, abs=1e-12)


def test_cdf_stable_under_strong_truncation():
    dist = make(DistributionKind.TRUNCATED_NORMAL, -30.0, 2.0)
    values = [dist.cdf(y) for y in (0.0, 0.05, 0.2, 1.0, 5.0)]
    assert values[0] == 0.0
    assert all(0.0 <= v <= 1.0 for v in values)
    assert all(b >= a for a, b in zip(values, values[1:]))


# -- quantile -------------------------------------------------------------------

@pytest.mark.parametrize("kind", ALL_KINDS)
def test_quantile_inverts_cdf(kind):
    dist = make(kind, 4.0, 1.5)
    for p in (0.01, 0.1, 0.5, 0.9, 0.99):
        q = dist.quantile(p)
        assert dist.cdf(q) == pytest.approx(p, abs=1e-8)


def test_quantile_rejects_endpoints():
    dist = make(DistributionKind.NORMAL, 0.0, 1.0)
    for p in (0.0, 1.0, -0.2, 1.3):
        with pytest.raises(ValueError):
            dist.quantile(p)


# -- sampling -------------------------------------------------------------------

def test_sampling_truncated_stays_in_support():
    draws = make(DistributionKind.TRUNCATED_NORMAL, 5.0, 1.0).sample(1000, seed=1)
    assert draws.shape == (1000,)
    assert np.all(draws >= 0.0)


def test_sampling_law_of_large_numbers():
    draws = make(DistributionKind.NORMAL, 0.0, 1.0).sample(100_000, seed=5)
    assert abs(draws.mean()) < 0.02


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_sampling_deterministic_per_seed(kind):
    dist = make(kind, 5.0, 1.0)
    assert np.array_equal(dist.sample(51, seed=9), dist.sample(51, seed=9))


def test_sampling_deep_truncation_uses_inverse_cdf():
    dist = make(DistributionKind.TRUNCATED_NORMAL, -5.0, 1.0)
    draws = dist.sample(500, seed=3)
    assert np.all(draws >= 0.0)
    # mass concentrates near zero for a strongly truncated parent
    assert np.median(draws) < 0.3


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_sampling_ks_distance_to_cdf(kind):
    dist = make(kind, 6.0, 2.0)
    draws = dist.sample(10_000, seed=17)
    assert ks_distance(draws, dist.cdf) < 0.02


def test_sampling_rejects_nonpositive_count():
    with pytest.raises(ValueError):
        make(DistributionKind.NORMAL, 0.0, 1.0).sample(0, seed=1)


# -- closed-form CRPS ------------------------------------------------------------

def test_crps_standard_normal_at_center():
    # 2 phi(0) - 1/sqrt(pi)
    expected = 2.0 / np.sqrt(2.0 * np.pi) - 1.0 / np.sqrt(np.pi)
    assert make(DistributionKind.NORMAL, 0.0, 1.0).crps(0.0) == pytest.approx(
        expected, abs=1e-9
    )
    assert expected == pytest.approx(0.233695, abs=1e-6)


def test_crps_truncated_far_from_boundary_matches_normal():
    tn = make(DistributionKind.TRUNCATED_NORMAL, 50.0, 1.0).crps(50.0)
    assert tn == pytest.approx(0.233695, abs=1e-6)


def test_crps_gamma_against_quadrature():
    dist = make(DistributionKind.GAMMA, 2.0, 1.0)
    oracle = crps_by_quadrature(
        reference_cdf(DistributionKind.GAMMA, 2.0, 1.0), 2.0, lower=0.0
    )
    assert dist.crps(2.0) == pytest.approx(oracle, abs=1e-6)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_crps_matches_quadrature_200_randomized(kind):
    rng = np.random.default_rng(zlib.crc32(kind.value.encode()))
    for _ in range(200):
        location, scale, y = random_case(kind, rng)
        got = make(kind, location, scale).crps(y)
        oracle = crps_by_quadrature(
            reference_cdf(kind, location, scale), y, lower=support_lower(kind)
        )
        assert got == pytest.approx(oracle, abs=1e-6)


def test_crps_truncated_strong_truncation_against_quadrature():
    rng = np.random.default_rng(99)
    for _ in range(25):
        scale = rng.uniform(0.2, 5.0)
        location = rng.uniform(-12.0, -4.0) * scale
        y = rng.uniform(0.0, 3.0 * scale)
        got = crps_truncated_normal(location, scale, y)
        oracle = crps_by_quadrature(
            reference_cdf(DistributionKind.TRUNCATED_NORMAL, location, scale),
            y,
            lower=0.0,
        )
        assert got == pytest.approx(oracle, abs=1e-6)
        assert got >= 0.0


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_crps_strictly_positive(kind, rng):
    for _ in range(50):
        location, scale, y = random_case(kind, rng)
        assert make(kind, location, scale).crps(y) > 0.0


@settings(max_examples=50, deadline=None)
@given(
    mu=st.floats(-50.0, 50.0),
    sigma=st.floats(0.05, 10.0),
    offset=st.floats(-20.0, 20.0),
)
def test_crps_normal_translation_consistency(mu, sigma, offset):
    left = crps_normal(mu, sigma, mu + offset)
    right = crps_normal(0.0, sigma, offset)
    assert left == pytest.approx(right, rel=1e-12, abs=1e-12)


def test_crps_truncated_converges_to_normal_far_from_zero():
    rng = np.random.default_rng(4)
    for _ in range(20):
        sigma = rng.uniform(0.1, 3.0)
        mu = rng.uniform(8.0, 20.0) * sigma
        y = mu + rng.uniform(-4.0, 4.0) * sigma
        assert abs(
            crps_truncated_normal(mu, sigma, y) - crps_normal(mu, sigma, y)
        ) < 1e-9


def test_crps_vectorized_matches_scalar():
    mu = np.array([0.0, 2.0, -1.0])
    sigma = np.array([1.0, 0.5, 2.0])
    y = np.array([0.3, 2.0, 0.0])
    vec = crps_truncated_normal(mu, sigma, y)
    for i in range(3):
        assert vec[i] == pytest.approx(crps_truncated_normal(mu[i], sigma[i], y[i]))


def test_gamma_moment_matching_reparameterization():
    dist = make(DistributionKind.GAMMA, 7.0, 2.0)
    draws = dist.sample(200_000, seed=8)
    assert draws.mean() == pytest.approx(7.0, abs=0.05)
    assert draws.std() == pytest.approx(2.0, abs=0.05)
