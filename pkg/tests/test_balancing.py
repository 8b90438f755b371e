import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from balwt import balancing as bal
from balwt.dataset import ProblemData
from balwt.errors import InfeasibleError, InvalidHyperparameter, NotDiagonalError
from balwt.instances import diagonal_problem, random_problem
from balwt.outcome_models import fit_ols


def test_l2_weights_minimize_objective(problem, rng):
    delta = 3.0 * problem.n
    fit = bal.solve_l2(problem, delta)
    base = bal.l2_penalized_objective(fit.weights, problem, delta)
    for _ in range(20):
        w = fit.weights + 1e-3 * rng.standard_normal(problem.n)
        assert bal.l2_penalized_objective(w, problem, delta) >= base
    assert fit.norm_family is bal.NormFamily.l2


def test_exact_balance(problem):
    fit = bal.solve_exact(problem)
    assert np.allclose(fit.phi_q_hat, problem.phi_q_mean, atol=1e-10)
    assert fit.imbalance < 1e-10
    assert bal.solve_l2(problem, 0.0).norm_family is bal.NormFamily.exact


def test_negative_delta(problem):
    with pytest.raises(InvalidHyperparameter):
        bal.solve_l2(problem, -1.0)


def test_linf_diagonal_soft_threshold(diag_problem):
    delta = 0.5 * np.median(np.abs(diag_problem.phi_q_mean))
    fit = bal.solve_linf_diagonal(diag_problem, delta)
    b = diag_problem.phi_q_mean
    assert np.allclose(fit.phi_q_hat, np.sign(b) * np.maximum(np.abs(b) - delta, 0))
    assert np.allclose(diag_problem.phi_p.T @ fit.weights / diag_problem.n, fit.phi_q_hat, atol=1e-10)


def test_linf_diagonal_rejects_correlated(problem):
    with pytest.raises(NotDiagonalError):
        bal.solve_linf_diagonal(problem, 0.1)


def test_linf_general_matches_qp_oracle(rng):
    data = random_problem(rng, 25, 3)
    n = data.n
    delta = 0.3 * np.max(np.abs(data.phi_q_mean))
    fit = bal.solve_linf_general(data, delta)
    cons = [{"type": "ineq", "fun": lambda w, s=s, j=j: delta - s * (data.phi_p[:, j] @ w / n - data.phi_q_mean[j])}
            for j in range(data.d) for s in (1, -1)]
    ref = minimize(lambda w: w @ w / n**2, np.zeros(n), jac=lambda w: 2 * w / n**2, constraints=cons,
                   method="SLSQP", options={"ftol": 1e-16, "maxiter": 1000})
    assert np.allclose(fit.weights, ref.x, atol=1e-4)
    assert bal.linf_kkt_residual(fit, data) < 1e-8


def test_linf_infeasible_reports_minimum(rng):
    x = rng.standard_normal((30, 2))
    x -= x.mean(axis=0)
    phi = np.column_stack([x, x[:, 0]])
    data = ProblemData(phi, rng.standard_normal(30), np.array([1.0, 0.5, 0.2]))
    # columns 0 and 2 coincide, so their reweighted means must match
    assert bal.linf_min_imbalance(data) == pytest.approx(0.4, abs=1e-9)
    with pytest.raises(InfeasibleError) as info:
        bal.solve_linf_general(data, 0.1)
    assert info.value.delta_min == pytest.approx(0.4, abs=1e-9)
    assert bal.solve_linf_general(data, 0.5).imbalance <= 0.5 + 1e-9


def test_riesz_loss_stationary_at_exact_balance(problem):
    theta = bal.solve_exact(problem).theta
    base = bal.riesz_loss(theta, problem)
    eps = 1e-5
    for j in range(problem.d):
        e = np.zeros(problem.d)
        e[j] = eps
        grad = (bal.riesz_loss(theta + e, problem) - bal.riesz_loss(theta - e, problem)) / (2 * eps)
        assert abs(grad) < 1e-5 * (1 + abs(base))


def test_simplex_matches_slsqp(rng):
    data = random_problem(rng, 30, 3, shift_scale=0.5)
    delta = 2.0
    fit = bal.solve_simplex_l2(data, delta)
    n = data.n
    obj = lambda v: np.sum((data.phi_p.T @ v - data.phi_q_mean) ** 2) + delta * v @ v
    ref = minimize(obj, np.full(n, 1 / n), bounds=[(0, None)] * n,
                   constraints=[{"type": "eq", "fun": lambda v: v.sum() - 1}], method="SLSQP",
                   options={"ftol": 1e-16, "maxiter": 2000})
    assert np.allclose(fit.weights / n, ref.x, atol=1e-6)
    assert fit.weights.min() >= 0 and fit.weights.mean() == pytest.approx(1.0)
    pos = fit.weights > 0
    assert np.allclose(fit.weights[pos], fit.intercept + data.phi_p[pos] @ fit.theta, atol=1e-8)


def test_trimming_identity(rng):
    data = random_problem(rng, 50, 3, shift_scale=2.0)
    fit = bal.solve_simplex_l2(data, 1.0)
    assert fit.info["support_size"] < data.n
    lhs, rhs = bal.trimmed_ols_identity(fit, data)
    assert lhs == pytest.approx(rhs, abs=1e-8)


def test_linear_external_weights_have_no_error(problem, rng):
    w = 1 + problem.phi_p @ rng.standard_normal(problem.d)
    _, dec = bal.evaluate_external_weights(w, problem)
    assert abs(dec.approx_error) < 1e-10
    assert dec.weighted_mean == pytest.approx(dec.reconstruction, abs=1e-10)


def test_wide_design_has_no_error(rng):
    data = random_problem(rng, 10, 20)
    w = np.exp(rng.standard_normal(10))
    _, dec = bal.evaluate_external_weights(w, data)
    assert abs(dec.approx_error) < 1e-10


def test_nonlinear_error_bounded(problem, rng):
    w = np.exp(0.5 * problem.phi_p @ rng.standard_normal(problem.d) / problem.d)
    _, dec = bal.evaluate_external_weights(w, problem)
    assert abs(dec.approx_error) <= dec.bound + 1e-12
    assert dec.weighted_mean == pytest.approx(dec.reconstruction, abs=1e-10)
    assert dec.ols_term == pytest.approx((problem.phi_p.T @ w / problem.n) @ fit_ols(problem).beta)


def test_external_weights_length(problem):
    with pytest.raises(InvalidHyperparameter):
        bal.evaluate_external_weights(np.ones(problem.n + 1), problem)


def test_entropy_exact_balance(rng):
    data = random_problem(rng, 200, 3, shift_scale=0.3)
    w = bal.entropy_weights(data)
    assert np.all(w > 0) and w.mean() == pytest.approx(1.0)
    assert np.allclose(data.phi_p.T @ w / data.n, data.phi_q_mean, atol=1e-8)


def test_entropy_linf_slack(rng):
    data = random_problem(rng, 200, 4, shift_scale=0.3)
    delta = 0.3 * np.max(np.abs(data.phi_q_mean))
    w, theta = bal.entropy_weights(data, delta, return_theta=True)
    resid = data.phi_p.T @ w / data.n - data.phi_q_mean
    assert np.max(np.abs(resid)) <= delta + 1e-7
    active = theta != 0
    # an active coordinate sits on the boundary, opposite in sign to theta
    assert np.allclose(resid[active], -delta * np.sign(theta[active]), atol=1e-7)


def test_entropy_l2_slack(rng):
    data = random_problem(rng, 150, 3, shift_scale=0.3)
    w, theta = bal.entropy_weights(data, 0.5, slack="l2", return_theta=True)
    resid = data.phi_p.T @ w / data.n - data.phi_q_mean
    assert np.allclose(resid, -0.5 * theta, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
def test_simplex_projection_properties(values):
    v = np.array(values)
    p = bal.project_simplex(v)
    assert p.min() >= 0
    assert p.sum() == pytest.approx(1.0)
    assert np.allclose(bal.project_simplex(p), p, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 2.0))
def test_linf_diagonal_feasible_and_minimal(seed, frac):
    data = diagonal_problem(np.random.default_rng(seed), 30, 4)
    delta = frac * np.max(np.abs(data.phi_q_mean))
    fit = bal.solve_linf_diagonal(data, delta)
    assert fit.imbalance <= delta + 1e-12
    assert np.all(np.abs(fit.phi_q_hat) <= np.abs(data.phi_q_mean) + 1e-15)
