import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from gpsvc.likelihood import LikelihoodEngine
from gpsvc.mle import MleControl, fit_mle
from gpsvc.model import ParamVector, SvcData
from gpsvc.select import (
    AdaptiveWeights,
    CdControl,
    SelectionResult,
    adaptive_weights,
    cd_pmle,
    effective_df,
    expected_improvement,
    grid_search,
    information_criterion,
    lhs_design,
    mbo_search,
    mu_lasso_step,
    penalized_neg2_log_lik,
    soft_threshold,
    theta_penalized_step,
)

from conftest import random_instance


def engine_from(inst, taper=None):
    return LikelihoodEngine(SvcData(inst["y"], inst["X"], inst["locs"], inst["W"]), inst["kernel"], taper)


def omega_from(inst):
    return ParamVector(inst["mu"], inst["rho"], inst["sigma2"], inst["tau2"])


def zero_weights(p, q):
    return AdaptiveWeights(np.zeros(p), np.zeros(q))


@pytest.fixture(scope="module")
def small_problem():
    rng = np.random.default_rng(17)
    n = 60
    locs = np.sort(rng.uniform(0, 10, n))
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
    eta = np.sin(locs)
    y = 1.0 + 2.0 * X[:, 1] + eta + 0.3 * rng.normal(size=n)
    data = SvcData(y, X, locs, X[:, :2])
    fit = fit_mle(data, MleControl(kernel="exp", hessian=False))
    return fit.engine, fit


# penalty and weights

def test_zero_weights_give_plain_likelihood(rng):
    inst = random_instance(rng, 12, 2, 2)
    eng, om = engine_from(inst), omega_from(inst)
    assert penalized_neg2_log_lik(eng, om, zero_weights(2, 2)) == eng.neg2_log_lik(om)


def test_penalty_hand_case(rng):
    inst = random_instance(rng, 4, 2, 1)
    eng = engine_from(inst)
    om = ParamVector([2.0, 0.0], inst["rho"], [0.0], inst["tau2"])
    w = AdaptiveWeights(np.array([0.5, 3.0]), np.array([7.0]))
    assert penalized_neg2_log_lik(eng, om, w) == pytest.approx(eng.neg2_log_lik(om) + 8.0, rel=1e-14)


def test_zero_parameters_carry_no_penalty(rng):
    inst = random_instance(rng, 8, 2, 2)
    eng = engine_from(inst)
    om = ParamVector([0.0, 0.0], inst["rho"], [0.0, 0.0], inst["tau2"])
    w = AdaptiveWeights(np.array([1.0, np.inf]), np.array([np.inf, 2.0]))
    assert penalized_neg2_log_lik(eng, om, w) == eng.neg2_log_lik(om)


def test_adaptive_weights():
    om = ParamVector([2.0, -0.5], [1.0], [4.0], 0.1)
    w = adaptive_weights(om, 1.0, 2.0)
    np.testing.assert_allclose(w.mu, [0.5, 2.0])
    np.testing.assert_allclose(w.var, [0.5])
    zero = adaptive_weights(ParamVector([0.0], [1.0, 1.0], [0.0, 1.0], 0.1), 1.0, 1.0)
    assert np.isinf(zero.mu[0]) and np.isinf(zero.var[0]) and zero.var[1] == 1.0
    assert np.all(w.mu >= 0)


def test_cd_control_validation():
    with pytest.raises(ValueError):
        CdControl(max_cycles=0)
    with pytest.raises(ValueError):
        CdControl(delta=0.0)


# mu step

def test_soft_threshold_hand_case():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0
    assert math.copysign(1.0, soft_threshold(-0.5, 1.0)) == 1.0


def test_lasso_single_coefficient_hand_case():
    # Sigma_Y = I, x = (1, 0): z = 3 and threshold n * lam = 2 * 0.5 = 1
    eng = LikelihoodEngine(SvcData([3.0, 0.0], [[1.0], [0.0]], [[0.0], [100.0]]), "wend1")
    theta = np.array([1.0, 0.0, 1.0])
    mu = mu_lasso_step(eng, theta, AdaptiveWeights(np.array([0.5]), np.array([0.0])))
    assert mu[0] == pytest.approx(2.0, abs=1e-12)


def test_lasso_without_penalty_is_gls(rng):
    for _ in range(5):
        inst = random_instance(rng, 20, 3, 2)
        eng, om = engine_from(inst), omega_from(inst)
        mu = mu_lasso_step(eng, om.theta, zero_weights(3, 2))
        np.testing.assert_allclose(mu, eng.gls_mean(om.theta), rtol=1e-7, atol=1e-9)


def test_lasso_infinite_weights_give_zero(rng):
    inst = random_instance(rng, 15, 3, 1)
    eng, om = engine_from(inst), omega_from(inst)
    w = AdaptiveWeights(np.full(3, np.inf), np.zeros(1))
    np.testing.assert_array_equal(mu_lasso_step(eng, om.theta, w, mu_start=[1, 2, 3]), 0.0)


def test_lasso_kkt_conditions(rng):
    inst = random_instance(rng, 25, 3, 2)
    eng, om = engine_from(inst), omega_from(inst)
    lam = np.array([0.0, 0.05, 0.5])
    mu = mu_lasso_step(eng, om.theta, AdaptiveWeights(lam, np.zeros(2)))
    fac = eng.factor(om.theta)
    Xt, yt = fac.solve_lower(eng.data.X), fac.solve_lower(eng.data.y)
    grad = Xt.T @ (yt - Xt @ mu)
    t = eng.data.n * lam
    for j in range(3):
        if mu[j] != 0:
            assert grad[j] == pytest.approx(t[j] * np.sign(mu[j]), abs=1e-7)
        else:
            assert abs(grad[j]) <= t[j] + 1e-7


# theta step

def test_theta_step_without_penalty_matches_frozen_mean_fit(small_problem):
    eng, fit = small_problem
    mu = fit.omega.mu
    ntheta = 2 * eng.data.q + 1
    theta, obj = theta_penalized_step(
        eng, mu, zero_weights(3, 2), fit.lower, fit.upper, fit.init, scheme="central"
    )
    frozen = fit_mle(
        eng.data,
        MleControl(kernel="exp", profile=False, hessian=False, scheme="central",
                   lower=np.r_[fit.lower, mu], init=np.r_[fit.init, mu], upper=np.r_[fit.upper, mu]),
        engine=eng,
    )
    np.testing.assert_array_equal(frozen.omega.mu, mu)
    assert obj == pytest.approx(eng.neg2_log_lik(theta, mu), rel=1e-14)
    assert obj == pytest.approx(frozen.neg2loglik, abs=1e-4)
    np.testing.assert_allclose(theta, frozen.omega.theta[:ntheta], rtol=1e-2, atol=1e-4)


def test_theta_step_infinite_weights_remove_all_variances(small_problem):
    eng, fit = small_problem
    w = AdaptiveWeights(np.zeros(3), np.full(2, np.inf))
    theta, obj = theta_penalized_step(eng, fit.omega.mu, w, fit.lower, fit.upper, fit.omega.theta)
    np.testing.assert_array_equal(theta[1:4:2], 0.0)
    # nugget-only model: optimum is the mean squared residual
    r = eng.data.y - eng.data.X @ fit.omega.mu
    assert theta[-1] == pytest.approx(np.mean(r**2), rel=1e-3)


def test_theta_step_does_not_increase_objective(small_problem):
    eng, fit = small_problem
    w = adaptive_weights(fit.omega, 0.0, 0.3)
    start = fit.init.copy()
    _, obj = theta_penalized_step(eng, fit.omega.mu, w, fit.lower, fit.upper, start)
    f0 = eng.neg2_log_lik(start, fit.omega.mu) + 2 * float(w.var @ start[1:4:2])
    assert obj <= f0


# coordinate descent

def test_cd_trace_is_monotone(small_problem):
    eng, fit = small_problem
    for lam in [(0.01, 0.01), (0.1, 0.5), (1.0, 0.001)]:
        cd = cd_pmle(eng, fit, *lam)
        assert np.all(np.diff(cd.objective_trace) <= 0)


def test_cd_with_tiny_penalty_matches_mle(small_problem):
    eng, fit = small_problem
    cd = cd_pmle(eng, fit, 1e-12, 1e-12)
    np.testing.assert_allclose(cd.omega.mu, fit.omega.mu, rtol=1e-3)
    np.testing.assert_allclose(cd.omega.theta, fit.omega.theta, rtol=1e-3)
    assert cd.converged


def test_cd_with_huge_penalty_removes_everything(small_problem):
    eng, fit = small_problem
    cd = cd_pmle(eng, fit, 1e6, 1e6)
    np.testing.assert_array_equal(cd.omega.mu, 0.0)
    np.testing.assert_array_equal(cd.omega.sigma2, 0.0)
    assert effective_df(eng, cd.omega.theta) == pytest.approx(eng.data.p, abs=1e-10)


# effective degrees of freedom

def hat_trace_oracle(eng, theta):
    Sigma = eng.cov_y(theta)
    X, n = eng.data.X, eng.data.n
    Sinv = np.linalg.inv(Sigma)
    G = np.linalg.solve(X.T @ Sinv @ X, X.T @ Sinv)
    H = X @ G + (Sigma - theta[-1] * np.eye(n)) @ Sinv @ (np.eye(n) - X @ G)
    return np.trace(H)


def test_df_without_random_effects_is_p(rng):
    inst = random_instance(rng, 20, 3, 2)
    eng = engine_from(inst)
    theta = ParamVector(inst["mu"], inst["rho"], [0.0, 0.0], 0.7).theta
    assert effective_df(eng, theta) == pytest.approx(3.0, abs=1e-10)


def test_df_matches_hat_matrix_oracle(rng):
    for n, p, q in [(3, 1, 1), (10, 2, 2), (25, 3, 3)]:
        inst = random_instance(rng, n, p, q)
        eng, om = engine_from(inst), omega_from(inst)
        assert effective_df(eng, om.theta, batch_size=4) == pytest.approx(
            hat_trace_oracle(eng, om.theta), abs=1e-10 * n
        )


def test_df_range(rng):
    for _ in range(50):
        n = int(rng.integers(4, 20))
        p = int(rng.integers(1, 3))
        inst = random_instance(rng, n, p, int(rng.integers(1, 3)))
        df = effective_df(engine_from(inst), omega_from(inst).theta)
        assert p - 1e-8 <= df <= n + 1e-8


# information criteria

class FixedEngine:
    """Stand-in with a fixed likelihood, for hand-checking the criteria."""

    def __init__(self, n, p, value):
        self.data = type("D", (), {"n": n, "p": p})()
        self.value = value

    def neg2_log_lik(self, omega):
        return self.value


def test_bic_hand_case():
    om = ParamVector([1.0, -2.0, 0.5, 0.0], [1.0, 1.0, 1.0], [0.3, 1e-9, 2.0], 0.1)
    ic = information_criterion(FixedEngine(100, 4, 200.0), om, "bic")
    assert ic == pytest.approx(223.026, abs=5e-4)
    empty = ParamVector([0.0], [1.0], [0.0], 0.1)
    assert information_criterion(FixedEngine(100, 1, 200.0), empty, "BIC") == 200.0


def test_bic_permutation_invariance(rng):
    inst = random_instance(rng, 20, 3, 3)
    om = ParamVector([1.0, 0.0, -1.0], inst["rho"], [0.5, 0.0, 1.0], inst["tau2"])
    eng = engine_from(inst)
    perm = [2, 0, 1]
    inst2 = dict(inst, X=inst["X"][:, perm], W=inst["W"][:, perm])
    om2 = ParamVector(om.mu[perm], om.rho[perm], om.sigma2[perm], om.nugget)
    assert information_criterion(engine_from(inst2), om2) == pytest.approx(
        information_criterion(eng, om), rel=1e-10
    )


def test_caic_formula_and_domain(rng):
    inst = random_instance(rng, 15, 2, 2)
    eng, om = engine_from(inst), omega_from(inst)
    n, p = 15, 2
    df = hat_trace_oracle(eng, om.theta)
    expected = eng.neg2_log_lik(om) + 2 * n / (n - p - 2) * (df + 1 - (df - p) / (n - p))
    assert information_criterion(eng, om, "caic") == pytest.approx(expected, rel=1e-10)
    tiny = random_instance(rng, 3, 1, 1)
    with pytest.raises(ValueError):
        information_criterion(engine_from(tiny), omega_from(tiny), "caic")
    with pytest.raises(ValueError):
        information_criterion(eng, om, "aic")


# expected improvement

def test_ei_reference_values():
    assert expected_improvement(1.0, 1.0, 0.0) == 0.0
    assert expected_improvement(0.0, 0.0, 1.0) == pytest.approx(0.398942, abs=1e-6)
    assert expected_improvement(1.0, 0.0, 1.0) == pytest.approx(1.083315, abs=1e-6)
    assert expected_improvement(1.0, 0.0, 1.0) == pytest.approx(
        stats.norm.cdf(1) + stats.norm.pdf(1), rel=1e-14
    )


@given(
    diff=st.floats(-20, 20),
    s=st.floats(0, 10),
    extra=st.floats(0.001, 5),
)
def test_ei_nonnegative_and_increasing_in_sd(diff, s, extra):
    a = expected_improvement(diff, 0.0, s)
    assert a >= 0
    if diff <= 0:
        assert expected_improvement(diff, 0.0, s + extra) >= a


def test_ei_rejects_negative_sd():
    with pytest.raises(ValueError):
        expected_improvement(0.0, 0.0, -1.0)


# Latin hypercube

def test_lhs_two_points_in_decades():
    pts = lhs_design(2, 1.0, 10.0, seed=0)
    for j in range(2):
        low = np.sum(pts[:, j] < math.sqrt(10))
        assert low == 1


@pytest.mark.parametrize("seed", range(5))
def test_lhs_one_point_per_stratum(seed):
    pts = lhs_design(5, 1e-3, 1.0, seed=seed)
    assert np.all((pts >= 1e-3) & (pts <= 1.0))
    strata = np.floor((np.log10(pts) + 3) / 3 * 5).astype(int)
    for j in range(2):
        assert sorted(strata[:, j]) == [0, 1, 2, 3, 4]


def test_lhs_determinism_and_errors():
    np.testing.assert_array_equal(lhs_design(6, 1e-2, 1, 3), lhs_design(6, 1e-2, 1, 3))
    with pytest.raises(ValueError):
        lhs_design(1, 1e-3, 1.0)
    with pytest.raises(ValueError):
        lhs_design(3, 1.0, 1.0)


# search with a test double objective

def bowl(lam_mu, lam_theta):
    a, b = math.log10(lam_mu), math.log10(lam_theta)
    return (a + 1.0) ** 2 + 2.0 * (b + 2.0) ** 2, None


def test_grid_and_mbo_agree_on_bowl():
    grid = SelectionResult("grid", grid_search(bowl, 1e-3, 1.0, 7), "bic")
    evals, flagged = mbo_search(bowl, 1e-3, 1.0, n_init=5, n_iter=15, seed=2)
    mbo = SelectionResult("mbo", evals, "bic", flagged)
    assert len(grid.evaluations) == 49 and len(evals) == 20 and not flagged
    assert (grid.best.lambda_mu, grid.best.lambda_theta) == pytest.approx((0.1, 0.01))
    assert math.log10(mbo.best.lambda_mu) == pytest.approx(-1.0, abs=0.15)
    assert math.log10(mbo.best.lambda_theta) == pytest.approx(-2.0, abs=0.15)


def test_mbo_without_iterations_uses_design_only():
    evals, _ = mbo_search(bowl, 1e-3, 1.0, n_init=4, n_iter=0, seed=5)
    design = lhs_design(4, 1e-3, 1.0, np.random.default_rng(5))
    assert len(evals) == 4
    np.testing.assert_allclose([[e.lambda_mu, e.lambda_theta] for e in evals], design)


def test_failed_cells_are_excluded():
    def flaky(lam_mu, lam_theta):
        if lam_mu < 0.01:
            raise np.linalg.LinAlgError("not positive definite")
        return bowl(lam_mu, lam_theta)

    res = SelectionResult("grid", grid_search(flaky, 1e-3, 1.0, 4), "bic")
    assert np.isnan(res.ic_values).sum() == 4
    assert res.best.ic == np.nanmin(res.ic_values)
    rows = res.trace_rows()
    assert list(rows[0]) == ["method", "iter", "lambda_mu", "lambda_theta", "ic_value", "converged"]
    assert [r["iter"] for r in rows] == list(range(1, 17))


def test_grid_is_thread_invariant():
    a = grid_search(bowl, 1e-3, 1.0, 5, threads=1)
    b = grid_search(bowl, 1e-3, 1.0, 5, threads=4)
    assert [(e.lambda_mu, e.lambda_theta, e.ic) for e in a] == [(e.lambda_mu, e.lambda_theta, e.ic) for e in b]
