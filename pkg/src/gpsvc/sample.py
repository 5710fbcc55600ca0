"""Simulate Gaussian processes and full SVC data sets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky

from .kernels import covariance
from .model import ParamVector, SvcData, _as_matrix, pairwise_distances

# relative jitter on the diagonal, used for sampling only
SAMPLE_JITTER = 1e-10


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_gp(locs, kernel, rho, sigma2, seed=None):
    """Draw a zero-mean GP with covariance ``sigma2 * r(u / rho)`` at `locs`.

    `seed` may be an int or a ``numpy.random.Generator`` (PCG64 by default).
    """
    locs = _as_matrix(locs)
    rng = _rng(seed)
    n = locs.shape[0]
    z = rng.standard_normal(n)
    if sigma2 == 0:
        return np.zeros(n)
    Sigma = covariance(kernel, rho, sigma2, pairwise_distances(locs))
    Sigma[np.diag_indices(n)] += SAMPLE_JITTER * Sigma.diagonal().max()
    L = cholesky(Sigma, lower=True)
    return L @ z


@dataclass
class SvcTruth:
    """Simulated SVC data together with the generating coefficients."""

    data: SvcData
    beta: np.ndarray
    params: ParamVector
    noise: np.ndarray
    seed: int | None


def sample_full_svc(means, variances, ranges, nugget_sd, locs, kernel="mat32", seed=None):
    """Sample a full SVC model: every covariate has a varying coefficient.

    The design has an intercept in the first column and independent
    standard-normal covariates in the others; ``W = X``. Coefficient ``k``
    is ``means[k] + eta_k(s)`` with ``eta_k`` a zero-mean GP.
    """
    means = np.atleast_1d(np.asarray(means, dtype=float))
    variances = np.atleast_1d(np.asarray(variances, dtype=float))
    ranges = np.atleast_1d(np.asarray(ranges, dtype=float))
    q = means.shape[0]
    if q < 1:
        raise ValueError("need at least one coefficient")
    if variances.shape != (q,) or ranges.shape != (q,):
        raise ValueError("means, variances and ranges must have equal lengths")
    if nugget_sd < 0:
        raise ValueError("nugget standard deviation must be nonnegative")
    locs = _as_matrix(locs)
    n = locs.shape[0]
    rng = _rng(seed)

    X = np.ones((n, q))
    if q > 1:
        X[:, 1:] = rng.standard_normal((n, q - 1))
    beta = np.empty((n, q))
    for k in range(q):
        beta[:, k] = means[k] + sample_gp(locs, kernel, ranges[k], variances[k], rng)
    noise = nugget_sd * rng.standard_normal(n)
    y = np.sum(beta * X, axis=1) + noise
    params = ParamVector(
        mu=means, rho=ranges, sigma2=variances, nugget=max(nugget_sd**2, np.finfo(float).tiny)
    )
    return SvcTruth(
        data=SvcData(y, X, locs),
        beta=beta,
        params=params,
        noise=noise,
        seed=seed if isinstance(seed, (int, np.integer)) or seed is None else None,
    )
