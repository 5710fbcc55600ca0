"""Joint selection of fixed and random effects by penalized likelihood.

The objective is ``-2 log L(omega)`` plus adaptive L1 penalties on the
fixed effects and on the GP variances::

    -2 log L + 2 n sum_j lam_j |mu_j| + 2 sum_k lam_{p+k} sigma2_k

with ``lam_j = lam_mu / |mu_j(MLE)|`` and ``lam_{p+k} = lam_theta / sigma2_k(MLE)``.
For a fixed shrinkage pair the objective is minimized by coordinate
descent over the blocks mu and theta; the pair itself is chosen by
minimizing an information criterion over a grid or by model-based
optimization with expected improvement.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import minimize
from scipy.stats import qmc

from .mle import MleControl, default_bounds_and_init, fit_mle, parscale_for
from .model import ParamVector, SvcData, split_theta
from .optimize import minimize_box
from .predict import Predictor

logger = logging.getLogger(__name__)

# entries with |value| at or below this count as zero in the BIC penalty
ZERO_TOL = 1e-8


class ConvergenceError(RuntimeError):
    """Coordinate-wise lasso did not converge; the last iterate is in ``last``."""

    def __init__(self, message, last):
        super().__init__(message)
        self.last = last


@dataclass
class AdaptiveWeights:
    """Per-parameter L1 weights; ``inf`` pins the parameter at zero."""

    mu: np.ndarray
    var: np.ndarray


@dataclass
class CdControl:
    max_cycles: int = 20
    delta: float = 1e-8
    on_loglik: bool = False

    def __post_init__(self):
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")


def adaptive_weights(mle_omega, lam_mu, lam_theta):
    """Adaptive-lasso weights anchored at the ML estimates."""
    if hasattr(mle_omega, "omega"):
        mle_omega = mle_omega.omega
    with np.errstate(divide="ignore"):
        w_mu = lam_mu / np.abs(mle_omega.mu)
        w_var = lam_theta / np.abs(mle_omega.sigma2)
    return AdaptiveWeights(mu=w_mu, var=w_var)


def _weighted_l1(weights, values):
    values = np.abs(values)
    # an infinite weight on an exact zero contributes nothing
    with np.errstate(invalid="ignore"):
        terms = np.where(values == 0, 0.0, weights * values)
    return float(np.sum(terms))


def penalty(n, mu, sigma2, weights):
    """Penalty added to ``-2 log L``."""
    return 2.0 * n * _weighted_l1(weights.mu, mu) + 2.0 * _weighted_l1(weights.var, sigma2)


def penalized_neg2_log_lik(engine, omega, weights):
    """``-2 log L(omega)`` plus the adaptive L1 penalties."""
    return engine.neg2_log_lik(omega) + penalty(engine.data.n, omega.mu, omega.sigma2, weights)


def soft_threshold(z, t):
    # adding 0.0 turns -0.0 into 0.0
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0) + 0.0


def mu_lasso_step(engine, theta, weights, mu_start=None, tol=1e-10, max_sweeps=10_000):
    """Exact minimizer over mu of the penalized objective at fixed theta.

    Whitens with the Cholesky factor of ``Sigma_Y(theta)`` and runs cyclic
    coordinate descent with soft-thresholding on
    ``|y~ - X~ mu|^2 + 2 n sum_j lam_j |mu_j|``.
    """
    data = engine.data
    fac = engine.factor(theta)
    yt = fac.solve_lower(data.y)
    Xt = fac.solve_lower(data.X)
    col_sq = np.sum(Xt * Xt, axis=0)
    thresh = data.n * np.asarray(weights.mu, dtype=float)
    frozen = ~np.isfinite(thresh)

    mu = np.zeros(data.p) if mu_start is None else np.array(mu_start, dtype=float)
    mu[frozen] = 0.0
    r = yt - Xt @ mu
    for _ in range(max_sweeps):
        max_change = 0.0
        for j in range(data.p):
            if frozen[j]:
                continue
            z = Xt[:, j] @ r + col_sq[j] * mu[j]
            new = soft_threshold(z, thresh[j]) / col_sq[j]
            delta = new - mu[j]
            if delta != 0.0:
                r -= Xt[:, j] * delta
                mu[j] = new
                max_change = max(max_change, abs(delta))
        if max_change < tol:
            return mu
    raise ConvergenceError(f"lasso coordinate descent did not converge in {max_sweeps} sweeps", mu)


def theta_penalized_step(
    engine,
    mu,
    weights,
    lower,
    upper,
    theta_start,
    parscale=None,
    scheme="forward",
    threads=1,
    maxiter=200,
):
    """Minimize the penalized objective over theta at fixed mu.

    GP components with infinite weight keep ``sigma2 = 0`` and their range
    is left untouched. Returns ``(theta, objective)``; if the optimizer does
    not improve on `theta_start`, the start is returned.
    """
    data = engine.data
    q = data.q
    theta_start = np.asarray(theta_start, dtype=float).copy()
    w_var = np.asarray(weights.var, dtype=float)
    pinned = ~np.isfinite(w_var)
    theta_start[1 : 2 * q : 2][pinned] = 0.0
    free = np.ones(2 * q + 1, dtype=bool)
    free[0 : 2 * q : 2][pinned] = False
    free[1 : 2 * q : 2][pinned] = False
    w_finite = np.where(pinned, 0.0, w_var)
    mu = np.asarray(mu, dtype=float)

    def full(x):
        theta = theta_start.copy()
        theta[free] = x
        return theta

    def objective(x):
        theta = full(x)
        return engine.neg2_log_lik(theta, mu) + 2.0 * float(w_finite @ theta[1 : 2 * q : 2])

    x0 = theta_start[free]
    f0 = objective(x0)
    if not free.any():
        return theta_start, f0
    scale = parscale_for(x0) if parscale is None else np.asarray(parscale, dtype=float)[free]
    res = minimize_box(
        objective,
        x0,
        np.asarray(lower, dtype=float)[free],
        np.asarray(upper, dtype=float)[free],
        parscale=scale,
        scheme=scheme,
        threads=threads,
        maxiter=maxiter,
    )
    if res.fun < f0:
        # re-evaluate at the returned point so the value is exact for it
        f1 = objective(res.x)
        if f1 <= f0:
            return full(res.x), f1
    return theta_start, f0


@dataclass
class CdResult:
    omega: ParamVector
    converged: bool
    cycles: int
    objective_trace: list
    weights: AdaptiveWeights


def cd_pmle(engine, mle_fit, lam_mu, lam_theta, control=None, threads=1):
    """Penalized ML estimate for one shrinkage pair by block coordinate descent.

    Starts at the ML estimate and alternates :func:`mu_lasso_step` and
    :func:`theta_penalized_step`. The penalized objective after every
    cycle is kept in ``objective_trace``; it never increases.
    """
    control = CdControl() if control is None else control
    weights = adaptive_weights(mle_fit.omega, lam_mu, lam_theta)
    n = engine.data.n
    ntheta = 2 * engine.data.q + 1
    lower, upper = mle_fit.lower[:ntheta], mle_fit.upper[:ntheta]
    scale = parscale_for(mle_fit.init[:ntheta])

    theta = mle_fit.omega.theta.copy()
    mu = mle_fit.omega.mu.copy()
    theta[1:-1:2][~np.isfinite(weights.var)] = 0.0
    mu[~np.isfinite(weights.mu)] = 0.0

    def pobj(theta, mu):
        rho, sigma2, _ = split_theta(theta)
        return engine.neg2_log_lik(theta, mu) + penalty(n, mu, sigma2, weights)

    current = pobj(theta, mu)
    trace = [current]
    converged = False
    cycles = 0
    for cycles in range(1, control.max_cycles + 1):
        mu_new = mu_lasso_step(engine, theta, weights, mu_start=mu)
        after_mu = pobj(theta, mu_new)
        if after_mu > current:
            mu_new, after_mu = mu, current
        theta_new, _ = theta_penalized_step(
            engine, mu_new, weights, lower, upper, theta, parscale=scale, threads=threads
        )
        after_theta = pobj(theta_new, mu_new)
        if after_theta > after_mu:
            theta_new, after_theta = theta, after_mu
        if control.on_loglik:
            change = abs(current - after_theta)
        else:
            change = max(np.max(np.abs(mu_new - mu)), np.max(np.abs(theta_new - theta)))
        theta, mu, current = theta_new, mu_new, after_theta
        trace.append(current)
        if change < control.delta:
            converged = True
            break
    omega = ParamVector.from_theta(theta, mu)
    return CdResult(omega=omega, converged=converged, cycles=cycles, objective_trace=trace, weights=weights)


def effective_df(engine, theta, batch_size=1024):
    """Trace of the hat matrix mapping y to the fitted values at theta.

    ``tau2 tr[(X^T S^-1 X)^-1 X^T S^-1 S^-1 X] + n - tau2 tr[S^-1]`` with
    ``S = Sigma_Y(theta)``.
    """
    if isinstance(theta, ParamVector):
        theta = theta.theta
    data = engine.data
    n = data.n
    tau2 = float(theta[-1])
    fac = engine.factor(theta)
    SinvX = fac.solve(data.X)
    M = data.X.T @ SinvX
    term1 = float(np.trace(np.linalg.solve(M, SinvX.T @ SinvX)))
    tr_inv = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        E = np.zeros((n, stop - start))
        E[np.arange(start, stop), np.arange(stop - start)] = 1.0
        Z = fac.solve_lower(E)
        tr_inv += float(np.sum(Z * Z))
    return tau2 * term1 + n - tau2 * tr_inv


def information_criterion(engine, omega, kind="bic"):
    """Deviance ``-2 log L(omega)`` plus a complexity penalty.

    ``kind="bic"`` adds ``log(n)`` per nonzero fixed effect and GP variance;
    ``kind="caic"`` adds the conditional AIC penalty based on
    :func:`effective_df`.
    """
    data = engine.data
    n, p = data.n, data.p
    deviance = engine.neg2_log_lik(omega)
    kind = kind.lower()
    if kind == "bic":
        k = int(np.sum(np.abs(omega.mu) > ZERO_TOL) + np.sum(np.abs(omega.sigma2) > ZERO_TOL))
        return deviance + np.log(n) * k
    if kind in ("caic", "caic_vb"):
        if n <= p + 2:
            raise ValueError("conditional AIC needs n > p + 2")
        df = effective_df(engine, omega.theta)
        return deviance + 2.0 * n / (n - p - 2) * (df + 1.0 - (df - p) / (n - p))
    raise ValueError(f"unknown information criterion {kind!r}")


def expected_improvement(xi_min, mu_hat, s_hat):
    """Expected improvement below `xi_min` of a N(mu_hat, s_hat^2) variable."""
    xi_min = np.asarray(xi_min, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    s_hat = np.asarray(s_hat, dtype=float)
    if np.any(s_hat < 0):
        raise ValueError("s_hat must be nonnegative")
    diff = xi_min - mu_hat
    positive = s_hat > 0
    safe_s = np.where(positive, s_hat, 1.0)
    # for extreme z the density underflows to 0, which is the right limit
    with np.errstate(over="ignore"):
        z = diff / safe_s
        ei = diff * stats.norm.cdf(z) + safe_s * stats.norm.pdf(z)
    ei = np.where(positive, np.maximum(ei, 0.0), 0.0)
    return float(ei) if ei.ndim == 0 else ei


def _box(lambda_min, lambda_max):
    lo = np.broadcast_to(np.asarray(lambda_min, dtype=float), (2,)).copy()
    hi = np.broadcast_to(np.asarray(lambda_max, dtype=float), (2,)).copy()
    if np.any(lo <= 0) or np.any(hi <= lo):
        raise ValueError(f"degenerate shrinkage box [{lo}, {hi}]")
    return lo, hi


def lhs_design(n_init, lambda_min, lambda_max, seed=None):
    """Latin hypercube sample of shrinkage pairs, stratified on log10 scale."""
    if n_init < 2:
        raise ValueError("n_init must be >= 2")
    lo, hi = _box(lambda_min, lambda_max)
    u = qmc.LatinHypercube(d=2, seed=np.random.default_rng(seed)).random(n_init)
    llo, lhi = np.log10(lo), np.log10(hi)
    return 10.0 ** (llo + u * (lhi - llo))


@dataclass
class Evaluation:
    """One information-criterion evaluation at a shrinkage pair."""

    iter: int
    lambda_mu: float
    lambda_theta: float
    ic: float
    converged: bool
    seconds: float = 0.0
    omega: ParamVector | None = None
    cycles: int = 0
    stage: str = ""
    objective_trace: list = field(default_factory=list)


@dataclass
class SelectionResult:
    """All evaluated shrinkage pairs and the chosen one."""

    method: str
    evaluations: list
    ic_type: str
    flagged: bool = False

    @property
    def best(self):
        valid = [e for e in self.evaluations if np.isfinite(e.ic)]
        if not valid:
            raise RuntimeError("no shrinkage pair could be evaluated")
        return min(valid, key=lambda e: e.ic)

    @property
    def lambdas(self):
        return np.array([[e.lambda_mu, e.lambda_theta] for e in self.evaluations])

    @property
    def ic_values(self):
        return np.array([e.ic for e in self.evaluations])

    def trace_rows(self):
        return [
            {
                "method": self.method,
                "iter": e.iter,
                "lambda_mu": e.lambda_mu,
                "lambda_theta": e.lambda_theta,
                "ic_value": e.ic,
                "converged": e.converged,
            }
            for e in self.evaluations
        ]


def _ic_objective(engine, mle_fit, ic_type, cd_control, threads=1):
    def evaluate(lam_mu, lam_theta):
        cd = cd_pmle(engine, mle_fit, lam_mu, lam_theta, cd_control, threads=threads)
        ic = information_criterion(engine, cd.omega, ic_type)
        return ic, cd

    return evaluate


def _run_one(objective, i, lam, stage):
    start = time.perf_counter()
    try:
        ic, cd = objective(float(lam[0]), float(lam[1]))
    except (np.linalg.LinAlgError, ValueError, ConvergenceError) as exc:
        logger.warning("evaluation at lambda=%s failed: %s", lam, exc)
        return Evaluation(i, float(lam[0]), float(lam[1]), float("nan"), False,
                          time.perf_counter() - start, stage=stage)
    elapsed = time.perf_counter() - start
    if cd is None:
        return Evaluation(i, float(lam[0]), float(lam[1]), float(ic), True, elapsed, stage=stage)
    return Evaluation(
        i, float(lam[0]), float(lam[1]), float(ic), cd.converged, elapsed,
        omega=cd.omega, cycles=cd.cycles, stage=stage, objective_trace=cd.objective_trace,
    )


def grid_search(objective, lambda_min=1e-3, lambda_max=1.0, n_per_dim=10, threads=1):
    """Evaluate `objective(lam_mu, lam_theta)` on a log-spaced lattice.

    `objective` returns ``(ic, cd_result_or_None)``. Cells are independent
    and are distributed over `threads` workers; the result order is fixed
    (lambda_mu outer, lambda_theta inner).
    """
    if n_per_dim < 2:
        raise ValueError("n_per_dim must be >= 2")
    lo, hi = _box(lambda_min, lambda_max)
    grid_mu = np.logspace(np.log10(lo[0]), np.log10(hi[0]), n_per_dim)
    grid_theta = np.logspace(np.log10(lo[1]), np.log10(hi[1]), n_per_dim)
    cells = [(a, b) for a in grid_mu for b in grid_theta]

    def job(i):
        return _run_one(objective, i + 1, cells[i], "grid")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            evaluations = list(pool.map(job, range(len(cells))))
    else:
        evaluations = [job(i) for i in range(len(cells))]
    return evaluations


def select_grid(engine, mle_fit, lambda_min=1e-3, lambda_max=1.0, n_per_dim=10, ic_type="bic",
                cd_control=None, threads=1):
    """Choose the shrinkage pair minimizing the information criterion on a lattice."""
    objective = _ic_objective(engine, mle_fit, ic_type, cd_control)
    evaluations = grid_search(objective, lambda_min, lambda_max, n_per_dim, threads)
    return SelectionResult("grid", evaluations, ic_type)


class Surrogate:
    """Constant-mean GP with Matern 3/2 covariance on log10 shrinkage pairs.

    Parameters are estimated by maximum likelihood with this package's own
    SVC machinery (one intercept, one varying coefficient).
    """

    def __init__(self, points, values):
        points = np.asarray(points, dtype=float)
        values = np.asarray(values, dtype=float)
        m = points.shape[0]
        data = SvcData(values, np.ones((m, 1)), points)
        s2 = float(np.var(values, ddof=1))
        lower, init, upper = default_bounds_and_init(data, profile=True)
        # near-interpolating surrogate: keep the nugget small
        lower[-1], init[-1], upper[-1] = 1e-8 * s2, 1e-4 * s2, s2
        self.fit = fit_mle(
            data,
            MleControl(kernel="mat32", profile=True, lower=lower, init=init, upper=upper,
                       hessian=False),
        )
        self.predictor = Predictor(self.fit.engine, self.fit.omega)
        self.xi_min = float(values.min())

    def mean_sd(self, z):
        z = np.atleast_2d(z)
        ones = np.ones((z.shape[0], 1))
        pred = self.predictor.predict(z, ones, ones)
        latent = np.maximum(pred.pred_var - self.fit.omega.nugget, 0.0)
        return pred.y_hat, np.sqrt(latent)

    def expected_improvement(self, z):
        mean, sd = self.mean_sd(z)
        return expected_improvement(self.xi_min, mean, sd)


def _maximize_ei(surrogate, llo, lhi, existing, n_side=8):
    starts = np.array(
        [[a, b] for a in np.linspace(llo[0], lhi[0], n_side) for b in np.linspace(llo[1], lhi[1], n_side)]
    )
    bounds = list(zip(llo, lhi))
    width = float(np.max(lhi - llo))

    def neg_ei(z):
        return -float(surrogate.expected_improvement(z)[0])

    candidates = []
    for z0 in starts:
        res = minimize(neg_ei, z0, method="L-BFGS-B", bounds=bounds)
        z = np.clip(res.x, llo, lhi)
        candidates.append((-neg_ei(z), tuple(z)))
    for z0 in starts:
        candidates.append((-neg_ei(z0), tuple(z0)))
    candidates.sort(key=lambda c: (-c[0], c[1]))
    for ei, z in candidates:
        z = np.array(z)
        if np.min(np.linalg.norm(existing - z, axis=1)) > 1e-6 * width:
            return z, ei
    return None, 0.0


def mbo_search(objective, lambda_min=1e-3, lambda_max=1.0, n_init=5, n_iter=15, seed=None):
    """Model-based minimization of `objective` with expected improvement.

    Returns ``(evaluations, flagged)``; `flagged` is True when the surrogate
    could not be fitted and the search stopped early.
    """
    if n_iter < 0:
        raise ValueError("n_iter must be >= 0")
    lo, hi = _box(lambda_min, lambda_max)
    rng = np.random.default_rng(seed)
    design = lhs_design(n_init, lo, hi, rng)
    evaluations = [_run_one(objective, i + 1, lam, "init") for i, lam in enumerate(design)]
    llo, lhi = np.log10(lo), np.log10(hi)
    flagged = False
    for it in range(n_iter):
        points = np.log10([[e.lambda_mu, e.lambda_theta] for e in evaluations])
        values = np.array([e.ic for e in evaluations])
        ok = np.isfinite(values)
        try:
            surrogate = Surrogate(points[ok], values[ok])
            z, ei = _maximize_ei(surrogate, llo, lhi, points)
        except (np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("surrogate fit failed: %s", exc)
            flagged = True
            break
        if z is None:
            z = llo + rng.random(2) * (lhi - llo)
        lam = 10.0 ** z
        evaluations.append(_run_one(objective, len(evaluations) + 1, lam, "infill"))
    return evaluations, flagged


def select_mbo(engine, mle_fit, lambda_min=1e-3, lambda_max=1.0, n_init=5, n_iter=15,
               ic_type="bic", cd_control=None, seed=None, threads=1):
    """Choose the shrinkage pair by model-based optimization of the criterion."""
    objective = _ic_objective(engine, mle_fit, ic_type, cd_control, threads=threads)
    evaluations, flagged = mbo_search(objective, lambda_min, lambda_max, n_init, n_iter, seed)
    return SelectionResult("mbo", evaluations, ic_type, flagged=flagged)
