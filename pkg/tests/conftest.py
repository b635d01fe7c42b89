"""Shared fixtures and the independent CRPS quadrature oracle."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate, stats

from enspost.distributions import DistributionKind


def crps_by_quadrature(cdf, y: float, lower: float = -np.inf) -> float:
    """CRPS as the integral of the squared CDF difference.

    Independent of the package's closed forms: callers pass a CDF built
    from scipy.stats frozen distributions.
    """
    if y >= lower:
        left, _ = integrate.quad(
            lambda t: cdf(t) ** 2, lower, y, limit=300, epsabs=1e-11
        )
        right, _ = integrate.quad(
            lambda t: (1.0 - cdf(t)) ** 2, y, np.inf, limit=300, epsabs=1e-11
        )
        return left + right
    tail, _ = integrate.quad(
        lambda t: (1.0 - cdf(t)) ** 2, lower, np.inf, limit=300, epsabs=1e-11
    )
    return (lower - y) + tail


def reference_cdf(kind: DistributionKind, location: float, scale: float):
    """scipy.stats CDF for the package's parameterization."""
    if kind is DistributionKind.NORMAL:
        return stats.norm(loc=location, scale=scale).cdf
    if kind is DistributionKind.TRUNCATED_NORMAL:
        return stats.truncnorm(
            a=-location / scale, b=np.inf, loc=location, scale=scale
        ).cdf
    alpha = (location / scale) ** 2
    rate = location / scale**2
    return stats.gamma(a=alpha, scale=1.0 / rate).cdf


def support_lower(kind: DistributionKind) -> float:
    return -np.inf if kind is DistributionKind.NORMAL else 0.0


def random_case(kind: DistributionKind, rng: np.random.Generator):
    """A random (location, scale, y) triple in a well-posed range."""
    if kind is DistributionKind.NORMAL:
        location = rng.uniform(-10.0, 10.0)
        scale = rng.uniform(0.1, 5.0)
        y = location + rng.uniform(-5.0, 5.0) * scale
    elif kind is DistributionKind.TRUNCATED_NORMAL:
        scale = rng.uniform(0.1, 5.0)
        location = rng.uniform(-3.0, 8.0) * scale
        y = rng.uniform(-scale, max(location, 0.0) + 5.0 * scale)
    else:
        location = rng.uniform(0.2, 20.0)
        scale = rng.uniform(location / 14.0, 1.5 * location)
        y = rng.uniform(0.0, location + 5.0 * scale)
    return location, scale, y


@pytest.fixture
def rng():
    return np.random.default_rng(20170101)
