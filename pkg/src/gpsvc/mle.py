"""Maximum likelihood estimation of GP-based SVC models."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .likelihood import LikelihoodEngine
from .model import ParamVector, SvcData, median_location_distance, split_theta
from .optimize import CONVERGED, minimize_box, numerical_hessian

logger = logging.getLogger(__name__)


class DegenerateResponseError(ValueError):
    pass


@dataclass
class MleControl:
    """Settings for :func:`fit_mle`.

    `lower`, `init` and `upper` are flat vectors in optimizer order:
    ``(rho_1, sigma2_1, ..., rho_q, sigma2_q, tau2)`` followed by the p fixed
    effects when the full likelihood is optimized. Missing entries fall back
    to :func:`default_bounds_and_init`.
    """

    kernel: str = "exp"
    taper: float | None = None
    profile: bool = True
    lower: np.ndarray | None = None
    init: np.ndarray | None = None
    upper: np.ndarray | None = None
    scheme: str = "forward"
    threads: int = 1
    maxiter: int = 200
    ftol: float = 1e7 * np.finfo(float).eps
    hessian: bool = True

    def __post_init__(self):
        if self.scheme not in ("forward", "central"):
            raise ValueError(f"scheme must be 'forward' or 'central', got {self.scheme!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        given = [np.asarray(v, dtype=float) for v in (self.lower, self.init, self.upper) if v is not None]
        if len(given) > 1 and len({g.shape for g in given}) > 1:
            raise ValueError("lower, init and upper must have equal lengths")
        if self.lower is not None and self.init is not None and np.any(
            np.asarray(self.lower) > np.asarray(self.init)
        ):
            raise ValueError("init below lower bound")
        if self.init is not None and self.upper is not None and np.any(
            np.asarray(self.init) > np.asarray(self.upper)
        ):
            raise ValueError("init above upper bound")


def default_bounds_and_init(data, profile=True):
    """Default ``(lower, init, upper)`` derived from the data.

    Ranges: ``(1e-3 d, d/4, 10 d)`` with ``d`` the median pairwise distance.
    GP variances: ``(0, s2/(q+1), 10 s2)``; nugget ``(1e-6, s2/(q+1), 10 s2)``
    with ``s2`` the sample variance of y. Without profiling, the fixed
    effects are appended with OLS starting values and no bounds.
    """
    if data.n < 2:
        raise ValueError("need at least two observations")
    s2 = float(np.var(data.y, ddof=1))
    if not s2 > 0:
        raise DegenerateResponseError("response has zero sample variance")
    delta = median_location_distance(data.locs)
    if not delta > 0:
        raise ValueError("all observation locations coincide")
    q = data.q
    lower = np.tile([1e-3 * delta, 0.0], q).tolist() + [1e-6]
    init = np.tile([delta / 4, s2 / (q + 1)], q).tolist() + [s2 / (q + 1)]
    upper = np.tile([10 * delta, 10 * s2], q).tolist() + [10 * s2]
    if not profile:
        ols = np.linalg.lstsq(data.X, data.y, rcond=None)[0]
        lower += [-np.inf] * data.p
        init += ols.tolist()
        upper += [np.inf] * data.p
    return np.array(lower), np.array(init), np.array(upper)


@dataclass
class FitResult:
    """Estimates and diagnostics of an SVC maximum likelihood fit."""

    omega: ParamVector
    neg2loglik: float
    profile: bool
    kernel: str
    taper: float | None
    nfev: int
    neval: int
    nit: int
    code: int
    message: str
    lower: np.ndarray
    init: np.ndarray
    upper: np.ndarray
    se: dict = field(default_factory=dict)
    residuals: np.ndarray | None = None
    resid_se: float = float("nan")
    r2: float = float("nan")
    bic: float = float("nan")
    engine: LikelihoodEngine | None = field(default=None, repr=False, compare=False)

    @property
    def loglik(self):
        return -0.5 * self.neg2loglik

    @property
    def converged(self):
        return self.code == CONVERGED

    def tests(self):
        """Z tests for the fixed effects and Wald tests for the GP variances."""
        se = self.se or {}
        z, pz = z_test(self.omega.mu, se.get("mu", np.full(self.omega.mu.shape, np.nan)))
        w, pw = wald_test(
            self.omega.sigma2, se.get("sigma2", np.full(self.omega.sigma2.shape, np.nan))
        )
        return {"z": z, "z_pvalue": pz, "wald": w, "wald_pvalue": pw}

    def to_dict(self):
        tests = self.tests()
        return {
            "estimates": self.omega.as_dict(),
            "std_errors": {k: _listify(v) for k, v in self.se.items()},
            "tests": {k: _listify(v) for k, v in tests.items()},
            "neg2loglik": self.neg2loglik,
            "profile": self.profile,
            "kernel": self.kernel,
            "taper": self.taper,
            "function_evaluations": self.nfev,
            "likelihood_evaluations": self.neval,
            "iterations": self.nit,
            "convergence_code": self.code,
            "message": self.message,
            "bounds": {
                "lower": _listify(self.lower),
                "init": _listify(self.init),
                "upper": _listify(self.upper),
            },
            "resid_se": self.resid_se,
            "r_squared": self.r2,
            "bic": self.bic,
        }

    @classmethod
    def from_dict(cls, d, engine=None):
        return cls(
            omega=ParamVector.from_dict(d["estimates"]),
            neg2loglik=d["neg2loglik"],
            profile=d["profile"],
            kernel=d["kernel"],
            taper=d["taper"],
            nfev=d["function_evaluations"],
            neval=d["likelihood_evaluations"],
            nit=d["iterations"],
            code=d["convergence_code"],
            message=d["message"],
            lower=_arrayify(d["bounds"]["lower"]),
            init=_arrayify(d["bounds"]["init"]),
            upper=_arrayify(d["bounds"]["upper"]),
            se={k: _arrayify(v) for k, v in d["std_errors"].items()},
            resid_se=d["resid_se"],
            r2=d["r_squared"],
            bic=d["bic"],
            engine=engine,
        )


def _listify(a):
    # JSON has no NaN/inf; store them as null / strings
    out = []
    for v in np.atleast_1d(np.asarray(a, dtype=float)):
        if np.isnan(v):
            out.append(None)
        elif np.isinf(v):
            out.append("inf" if v > 0 else "-inf")
        else:
            out.append(float(v))
    return out


def _arrayify(values):
    return np.array([np.nan if v is None else float(v) for v in values], dtype=float)


def z_test(estimate, se):
    """Z statistic and two-sided normal p-value; NaN where the SE is missing."""
    estimate = np.asarray(estimate, dtype=float)
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(np.isfinite(se) & (se > 0), estimate / se, np.nan)
    return z, 2.0 * stats.norm.sf(np.abs(z))


def wald_test(estimate, se):
    """Wald statistic ``(est/se)^2`` with upper-tail chi-square(1) p-value."""
    estimate = np.asarray(estimate, dtype=float)
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(np.isfinite(se) & (se > 0), (estimate / se) ** 2, np.nan)
    return w, stats.chi2.sf(w, df=1)


def _resolve_bounds(data, control):
    lower, init, upper = default_bounds_and_init(data, control.profile)
    dim = lower.shape[0]
    for name in ("lower", "init", "upper"):
        given = getattr(control, name)
        if given is None:
            continue
        given = np.asarray(given, dtype=float)
        if given.shape != (dim,):
            raise ValueError(f"{name} must have length {dim}, got {given.shape}")
        if name == "lower":
            lower = given
        elif name == "init":
            init = given
        else:
            upper = given
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    q = data.q
    if np.any(lower[: 2 * q : 2] <= 0) or np.any(lower[1 : 2 * q : 2] < 0) or lower[2 * q] <= 0:
        raise ValueError("bounds must keep ranges > 0, variances >= 0 and nugget > 0")
    init = np.clip(init, lower, upper)
    return lower, init, upper


def parscale_for(init):
    """Optimizer scaling ``max(|init|, 1)`` per coordinate."""
    return np.maximum(np.abs(np.asarray(init, dtype=float)), 1.0)


def fit_mle(data, control=None, engine=None, **kwargs):
    """Maximum likelihood fit of a GP-based SVC model.

    Parameters
    ----------
    data : SvcData
    control : MleControl, optional
        Fit settings; keyword arguments override its fields.
    engine : LikelihoodEngine, optional
        Reuse an existing engine (must match kernel and taper of `control`).

    Returns
    -------
    FitResult
        Non-convergence is reported through ``code`` rather than raised.
    """
    control = MleControl() if control is None else control
    if kwargs:
        control = replace(control, **kwargs)
    if engine is None:
        engine = LikelihoodEngine(data, control.kernel, control.taper)
    lower, init, upper = _resolve_bounds(data, control)
    ntheta = 2 * data.q + 1

    if control.profile:
        objective = engine.profile_neg2_log_lik
    else:
        def objective(x):
            return engine.neg2_log_lik(x[:ntheta], x[ntheta:])

    res = minimize_box(
        objective,
        init,
        lower,
        upper,
        parscale=parscale_for(init),
        scheme=control.scheme,
        threads=control.threads,
        maxiter=control.maxiter,
        ftol=control.ftol,
    )
    theta = res.x[:ntheta]
    mu = engine.gls_mean(theta) if control.profile else res.x[ntheta:]
    omega = ParamVector.from_theta(theta, mu)
    fit = FitResult(
        omega=omega,
        neg2loglik=engine.neg2_log_lik(omega),
        profile=control.profile,
        kernel=engine.kernel,
        taper=None if engine.taper is None else engine.taper.range,
        nfev=res.nfev,
        neval=res.neval,
        nit=res.nit,
        code=res.code,
        message=res.message,
        lower=lower,
        init=init,
        upper=upper,
        engine=engine,
    )
    logger.info("MLE finished: code %d after %d evaluations", res.code, res.nfev)
    if control.hessian:
        fit.se = standard_errors(fit, engine, threads=control.threads)
    summary_stats(fit, engine)
    return fit


def hessian_steps(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(1e-4, 1e-4 * np.abs(x))


def standard_errors(fit, engine, threads=1):
    """Standard errors from the observed information (Hessian of ``-log L``).

    With a profile fit the Hessian is taken over theta only and the fixed
    effects use the GLS covariance ``(X^T Sigma_Y^-1 X)^-1`` at theta-hat.
    Entries whose inverse-Hessian diagonal is not positive get NaN.
    """
    data = engine.data
    ntheta = 2 * data.q + 1
    theta = fit.omega.theta
    if fit.profile:
        x = theta

        def half(t):
            return 0.5 * engine.profile_neg2_log_lik(t)

        lo, hi = fit.lower[:ntheta], fit.upper[:ntheta]
    else:
        x = np.concatenate([theta, fit.omega.mu])

        def half(v):
            return 0.5 * engine.neg2_log_lik(v[:ntheta], v[ntheta:])

        lo, hi = fit.lower, fit.upper

    H = numerical_hessian(half, x, hessian_steps(x), lo, hi, threads=threads)
    se = _se_from_hessian(H)
    if fit.profile:
        fac = engine.factor(theta)
        Xt = fac.solve_lower(data.X)
        try:
            cov_mu = np.linalg.inv(Xt.T @ Xt)
            se_mu = _sqrt_diag(cov_mu)
        except np.linalg.LinAlgError:
            se_mu = np.full(data.p, np.nan)
    else:
        se_mu = se[ntheta:]
    rho, sigma2, nugget = split_theta(se[:ntheta])
    return {"mu": se_mu, "rho": rho, "sigma2": sigma2, "nugget": np.array([nugget])}


def _sqrt_diag(M):
    diag = np.diag(M)
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(diag) & (diag > 0), np.sqrt(np.abs(diag)), np.nan)


def _se_from_hessian(H):
    if not np.all(np.isfinite(H)):
        return np.full(H.shape[0], np.nan)
    try:
        return _sqrt_diag(np.linalg.inv(H))
    except np.linalg.LinAlgError:
        return np.full(H.shape[0], np.nan)


def summary_stats(fit, engine):
    """Fill residuals, residual SE, R^2 and BIC of `fit` in place and return them.

    Residuals are conditional on the predicted varying coefficients,
    ``y - X mu - sum_k w_k eta_k``. BIC counts all ``p + 2q + 1`` parameters.
    """
    from .predict import fitted_random_effects

    data = engine.data
    eta = fitted_random_effects(fit, engine)
    e = data.y - data.X @ fit.omega.mu - np.sum(data.W * eta, axis=1)
    tss = float(np.sum((data.y - data.y.mean()) ** 2))
    fit.residuals = e
    fit.resid_se = float(np.std(e, ddof=1)) if data.n > 1 else float("nan")
    fit.r2 = 1.0 - float(e @ e) / tss if tss > 0 else float("nan")
    fit.bic = fit.neg2loglik + np.log(data.n) * engine.n_params
    return {"residuals": e, "resid_se": fit.resid_se, "r2": fit.r2, "bic": fit.bic}
