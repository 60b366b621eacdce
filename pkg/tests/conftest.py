"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest
from scipy.special import ndtr, ndtri, owens_t


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="run the long Monte Carlo checks as well",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# ---------------------------------------------------------------------------
# Closed-form CDFs used as finite-difference oracles
# ---------------------------------------------------------------------------

def bvn_cdf(x, y, rho):
    """Standard bivariate normal CDF via Owen's T (near machine precision)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    denom = np.sqrt(1.0 - rho * rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        ax = (y - rho * x) / (x * denom)
        ay = (x - rho * y) / (y * denom)
    out = 0.5 * (ndtr(x) + ndtr(y)) - owens_t(x, ax) - owens_t(y, ay)
    corr = np.where((x * y > 0) | ((x * y == 0) & (x + y >= 0)), 0.0, 0.5)
    return out - corr


def gaussian_copula_cdf(u, v, rho):
    return bvn_cdf(ndtri(u), ndtri(v), rho)


def gumbel_copula_cdf(u, v, delta):
    return np.exp(-(((-np.log(u)) ** delta + (-np.log(v)) ** delta) ** (1.0 / delta)))


def trivariate_gaussian_copula_logpdf(u, corr):
    """Closed-form log density of the 3-d Gaussian copula at an (n, 3) array."""
    z = ndtri(np.asarray(u, dtype=float))
    inv = np.linalg.inv(corr)
    _, logdet = np.linalg.slogdet(corr)
    return -0.5 * logdet - 0.5 * np.einsum("ni,ij,nj->n", z, inv - np.eye(3), z)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
