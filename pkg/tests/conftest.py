import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

SQ3, SQ5 = math.sqrt(3.0), math.sqrt(5.0)


def r_scalar(kind, h):
    """Scalar reference correlations written independently of the package."""
    if kind == "exp":
        return math.exp(-h)
    if kind == "mat32":
        return (1 + SQ3 * h) * math.exp(-SQ3 * h)
    if kind == "mat52":
        return (1 + SQ5 * h + 5 * h * h / 3) * math.exp(-SQ5 * h)
    if h >= 1:
        return 0.0
    if kind == "sph":
        return 1 - 1.5 * h + 0.5 * h**3
    if kind == "wend1":
        return (1 - h) ** 4 * (4 * h + 1)
    if kind == "wend2":
        return (1 - h) ** 6 * (35 * h * h + 18 * h + 3) / 3
    raise KeyError(kind)


def dense_cov_y(y, X, W, locs, kernel, rho, sigma2, tau2, taper=None):
    """Double-loop construction of Sigma_Y."""
    n, q = W.shape
    S = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            u = math.sqrt(sum((locs[a, j] - locs[b, j]) ** 2 for j in range(locs.shape[1])))
            t = 1.0 if taper is None else r_scalar(taper[1], u / taper[0])
            for k in range(q):
                S[a, b] += W[a, k] * W[b, k] * sigma2[k] * r_scalar(kernel, u / rho[k]) * t
        S[a, a] += tau2
    return S


def dense_neg2_log_lik(y, X, W, locs, kernel, rho, sigma2, tau2, mu, taper=None):
    """Term by term: n log 2pi + log det + quadratic form with an explicit inverse."""
    S = dense_cov_y(y, X, W, locs, kernel, rho, sigma2, tau2, taper)
    sign, logdet = np.linalg.slogdet(S)
    assert sign > 0
    r = y - X @ mu
    return len(y) * math.log(2 * math.pi) + logdet + r @ np.linalg.inv(S) @ r


def random_instance(rng, n, p, q, d=1, kernel="exp"):
    y = rng.normal(size=n)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))]) if p > 1 else np.ones((n, 1))
    W = np.column_stack([np.ones(n), rng.normal(size=(n, q - 1))]) if q > 1 else np.ones((n, 1))
    locs = rng.uniform(0, 5, size=(n, d))
    rho = rng.uniform(0.5, 3.0, size=q)
    sigma2 = rng.uniform(0.2, 2.0, size=q)
    tau2 = float(rng.uniform(0.1, 1.0))
    mu = rng.normal(size=p)
    return dict(y=y, X=X, W=W, locs=locs, kernel=kernel, rho=rho, sigma2=sigma2, tau2=tau2, mu=mu)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def uschange():
    from gpsvc.datasets import uschange_svc_data

    return uschange_svc_data()


@pytest.fixture(scope="session")
def uschange_mle(uschange):
    from gpsvc.mle import fit_mle

    data, _ = uschange
    return fit_mle(data, kernel="exp", profile=True, hessian=False)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
