"""Marginal covariance and (profile) log-likelihood of the SVC model.

The response is marginally ``N(X mu, Sigma_Y(theta))`` with

    Sigma_Y = sum_k (w_k w_k^T) * Sigma_k + tau2 * I,

where ``Sigma_k`` is the (optionally tapered) covariance matrix of the k-th
varying coefficient. All solves and the log-determinant go through a single
Cholesky factorization, dense or sparse.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack, solve_triangular

from .kernels import Taper, correlation, _check_kind
from .model import ParamVector, SvcData, pairwise_distances, sparse_distances, split_theta
from .sparse_cholesky import NotPositiveDefiniteError, SymbolicCholesky

LOG_2PI = float(np.log(2.0 * np.pi))


class RankDeficientError(np.linalg.LinAlgError):
    pass


class DenseFactor:
    """Lower Cholesky factor of a dense SPD matrix."""

    def __init__(self, A):
        L, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
        if info > 0:
            raise NotPositiveDefiniteError(info - 1)
        if info < 0:
            raise ValueError(f"illegal argument to dpotrf ({info})")
        self.L = L

    @property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def solve_lower(self, b):
        return solve_triangular(self.L, b, lower=True, check_finite=False)

    def solve(self, b):
        z = solve_triangular(self.L, b, lower=True, check_finite=False)
        return solve_triangular(self.L, z, lower=True, trans="T", check_finite=False)


class LikelihoodEngine:
    """Evaluates the Gaussian likelihood of an SVC model for given parameters.

    Parameters
    ----------
    data : SvcData
    kernel : str
        Correlation family shared by all varying coefficients.
    taper : float or Taper, optional
        Taper range (or full taper spec). When given, covariances are
        multiplied by a compactly supported taper and the factorization is
        sparse.

    Notes
    -----
    The engine is immutable after construction; concurrent evaluations at
    different parameters are safe.
    """

    def __init__(self, data, kernel="exp", taper=None):
        if not isinstance(data, SvcData):
            raise TypeError("data must be an SvcData instance")
        _check_kind(kernel)
        zero_cols = np.flatnonzero(~np.any(data.W != 0, axis=0))
        if zero_cols.size:
            raise ValueError(
                f"random-effect columns {zero_cols.tolist()} are identically zero; "
                "their variances are not identifiable"
            )
        self.data = data
        self.kernel = kernel
        if taper is not None and not isinstance(taper, Taper):
            taper = Taper.for_kernel(kernel, taper)
        self.taper = taper

        W = data.W
        if taper is None:
            self._dist = pairwise_distances(data.locs)
            self._ww = [np.outer(W[:, k], W[:, k]) for k in range(data.q)]
        else:
            rows, cols, dist = sparse_distances(data.locs, taper.range)
            self._rows, self._cols, self._dist = rows, cols, dist
            self._is_diag = rows == cols
            tap = taper(dist)
            self._ww = [W[rows, k] * W[cols, k] * tap for k in range(data.q)]
            self._symbolic = SymbolicCholesky(rows, cols, data.n)

    @property
    def tapered(self):
        return self.taper is not None

    @property
    def n_params(self):
        """Number of free parameters ``p + 2q + 1``."""
        return self.data.p + 2 * self.data.q + 1

    def _values(self, theta):
        rho, sigma2, nugget = split_theta(theta)
        if rho.shape[0] != self.data.q:
            raise ValueError(f"theta has {rho.shape[0]} SVCs, data has {self.data.q}")
        if np.any(rho <= 0) or np.any(sigma2 < 0) or nugget < 0:
            raise ValueError("need ranges > 0, variances >= 0 and nugget >= 0")
        out = np.zeros_like(self._dist)
        for k in range(self.data.q):
            if sigma2[k] == 0.0:
                continue
            out += sigma2[k] * correlation(self.kernel, self._dist / rho[k]) * self._ww[k]
        return out, nugget

    def cov_y(self, theta):
        """Assemble ``Sigma_Y(theta)``; sparse CSC when tapered, else dense."""
        values, nugget = self._values(theta)
        if not self.tapered:
            values[np.diag_indices_from(values)] += nugget
            return values
        values = values + nugget * self._is_diag
        n = self.data.n
        return sp.csc_matrix((values, (self._rows, self._cols)), shape=(n, n))

    def factor(self, theta):
        """Cholesky factorization of ``Sigma_Y(theta)``."""
        values, nugget = self._values(theta)
        if not self.tapered:
            values[np.diag_indices_from(values)] += nugget
            return DenseFactor(values)
        return self._symbolic.factor(values + nugget * self._is_diag)

    def _whitened(self, fac):
        yt = fac.solve_lower(self.data.y)
        Xt = fac.solve_lower(self.data.X)
        return yt, Xt

    def neg2_log_lik(self, omega, mu=None):
        """``-2 log L`` at `omega` (a ParamVector, or theta together with `mu`)."""
        theta, mu = _unpack(omega, mu)
        fac = self.factor(theta)
        yt, Xt = self._whitened(fac)
        r = yt - Xt @ mu
        return self.data.n * LOG_2PI + fac.logdet + float(r @ r)

    def gls_mean(self, theta, fac=None):
        """Generalized least squares estimate of the fixed effects given theta."""
        theta = _theta_of(theta)
        fac = self.factor(theta) if fac is None else fac
        yt, Xt = self._whitened(fac)
        return _gls(Xt, yt)

    def profile_neg2_log_lik(self, theta):
        """``-2 log L`` with the fixed effects replaced by their GLS estimate."""
        theta = _theta_of(theta)
        fac = self.factor(theta)
        yt, Xt = self._whitened(fac)
        mu = _gls(Xt, yt)
        r = yt - Xt @ mu
        return self.data.n * LOG_2PI + fac.logdet + float(r @ r)


def _gls(Xt, yt):
    Q, R = np.linalg.qr(Xt)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise RankDeficientError(
            "X^T Sigma_Y^{-1} X is singular; remove collinear fixed-effect columns"
        )
    return solve_triangular(R, Q.T @ yt, lower=False)


def _theta_of(theta):
    if isinstance(theta, ParamVector):
        return theta.theta
    return np.asarray(theta, dtype=float)


def _unpack(omega, mu):
    if isinstance(omega, ParamVector):
        return omega.theta, omega.mu
    if mu is None:
        raise TypeError("mu is required when omega is given as a theta vector")
    return np.asarray(omega, dtype=float), np.atleast_1d(np.asarray(mu, dtype=float))
