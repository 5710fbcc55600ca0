"""EBLUP prediction of varying coefficients and responses at new locations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import covariance
from .model import _as_matrix, pairwise_distances


@dataclass
class PredictionResult:
    """Predicted zero-mean SVCs and, when covariates were given, responses.

    ``eta`` has one column per varying coefficient (named ``SVC_1..SVC_q``);
    mean effects are not included.
    """

    eta: np.ndarray
    y_hat: np.ndarray | None = None
    pred_var: np.ndarray | None = None

    @property
    def columns(self):
        names = [f"SVC_{k + 1}" for k in range(self.eta.shape[1])]
        if self.y_hat is not None:
            names += ["y_hat", "pred_var"]
        return names

    def table(self):
        """Rows of the output table in the order of :attr:`columns`."""
        cols = [self.eta]
        if self.y_hat is not None:
            cols += [self.y_hat[:, None], self.pred_var[:, None]]
        return np.hstack(cols)


class Predictor:
    """Kriging predictor for fixed parameters; factorizes ``Sigma_Y`` once.

    Safe to share between threads predicting disjoint batches.
    """

    def __init__(self, engine, omega):
        self.engine = engine
        self.omega = omega
        data = engine.data
        self.fac = engine.factor(omega.theta)
        self.alpha = self.fac.solve(data.y - data.X @ omega.mu)

    def cross_covariance(self, newlocs, k):
        """``m x n`` matrix with entries ``w_i^(k) c_k(|s* - s_i|)``."""
        data = self.engine.data
        dist = pairwise_distances(data.locs, newlocs)
        c = covariance(self.engine.kernel, self.omega.rho[k], self.omega.sigma2[k], dist)
        if self.engine.taper is not None:
            c = c * self.engine.taper(dist)
        return c * data.W[:, k][None, :]

    def predict(self, newlocs, newX=None, newW=None, batch_size=2048):
        newlocs = _as_matrix(newlocs)
        data = self.engine.data
        if newlocs.shape[1] != data.d:
            raise ValueError(f"new locations have {newlocs.shape[1]} columns, expected {data.d}")
        if (newX is None) != (newW is None):
            raise ValueError("newX and newW must be given together")
        m = newlocs.shape[0]
        if newX is not None:
            newX, newW = _as_matrix(newX), _as_matrix(newW)
            if newX.shape != (m, data.p) or newW.shape != (m, data.q):
                raise ValueError(
                    f"newX must be ({m}, {data.p}) and newW ({m}, {data.q}); "
                    f"got {newX.shape} and {newW.shape}"
                )

        eta = np.empty((m, data.q))
        pred_var = None if newX is None else np.empty(m)
        for start in range(0, m, batch_size):
            sl = slice(start, min(start + batch_size, m))
            C = [self.cross_covariance(newlocs[sl], k) for k in range(data.q)]
            for k in range(data.q):
                eta[sl, k] = C[k] @ self.alpha
            if newX is not None:
                V = sum(newW[sl, k][:, None] * C[k] for k in range(data.q))
                Z = self.fac.solve_lower(V.T)
                prior = (newW[sl] ** 2) @ self.omega.sigma2
                latent = np.maximum(prior - np.sum(Z * Z, axis=0), 0.0)
                pred_var[sl] = latent + self.omega.nugget

        if newX is None:
            return PredictionResult(eta=eta)
        y_hat = newX @ self.omega.mu + np.sum(newW * eta, axis=1)
        return PredictionResult(eta=eta, y_hat=y_hat, pred_var=pred_var)


def predict_svc(fit, newlocs, newX=None, newW=None, engine=None):
    """Predict the SVCs (and optionally responses) of a fitted model at `newlocs`.

    Parameters
    ----------
    fit : FitResult
    newlocs : array_like, shape (m, d)
    newX, newW : array_like, optional
        Covariates at the new locations; when given the response prediction
        and its plug-in predictive variance are returned as well.
    engine : LikelihoodEngine, optional
        Defaults to the engine stored on `fit`.
    """
    engine = fit.engine if engine is None else engine
    if engine is None:
        raise ValueError("fit has no likelihood engine attached; pass engine=")
    return Predictor(engine, fit.omega).predict(newlocs, newX, newW)


def fitted_random_effects(fit, engine=None):
    """Predicted SVCs at the observed locations (n x q)."""
    engine = fit.engine if engine is None else engine
    return predict_svc(fit, engine.data.locs, engine=engine).eta
