import numpy as np
import pytest

from balwt import balancing as bal
from balwt.dataset import ProblemData
from balwt.errors import InvalidInput, InvalidSplit
from balwt.instances import random_problem
from balwt.tuning import FoldPlan, Scheme, cv_imbalance, cv_outcome, cv_outcome_criterion, cv_riesz, delta_equals_lambda


def loo_ridge_error(data, lam):
    """Leave-one-out squared error of ridge with a free intercept via the hat matrix."""
    n, d = data.n, data.d
    x = np.column_stack([np.ones(n), data.phi_p])
    pen = np.diag([0.0] + [(n - 1) * lam] * d)
    hat = x @ np.linalg.solve(x.T @ x + pen, x.T)
    resid = data.y_p - hat @ data.y_p
    return float(np.mean((resid / (1 - np.diag(hat))) ** 2))


@pytest.mark.parametrize("lam", [0.0, 0.01, 0.5, 5.0])
def test_outcome_cv_matches_loo_hat_matrix(rng, lam):
    data = random_problem(rng, 25, 4)
    assert cv_outcome_criterion(data, lam, folds=25) == pytest.approx(loo_ridge_error(data, lam), rel=1e-9)


def naive_weight_criteria(data, delta, folds, seed):
    imb, riesz = [], []
    for train, held in FoldPlan(data.phi_p, folds, seed).pairs():
        sub = ProblemData(data.phi_p[train], data.y_p[train], data.phi_q_mean, require_centered=False)
        theta = bal.solve_l2(sub, len(train) * delta).theta
        held_data = ProblemData(data.phi_p[held], data.y_p[held], data.phi_q_mean, require_centered=False)
        w = held_data.phi_p @ theta
        imb.append(np.sum((held_data.phi_p.T @ w / len(held) - data.phi_q_mean) ** 2))
        riesz.append(bal.riesz_loss(theta, held_data))
    return np.mean(imb), np.mean(riesz)


def test_weight_criteria_match_refits(rng):
    data = random_problem(rng, 60, 5)
    res_i = cv_imbalance(data, folds=4, seed=3)
    res_r = cv_riesz(data, folds=4, seed=3)
    for x, v, _ in res_i.curve[::7]:
        assert v == pytest.approx(naive_weight_criteria(data, x, 4, 3)[0], rel=1e-8, abs=1e-12)
    for x, v, _ in res_r.curve[::7]:
        assert v == pytest.approx(naive_weight_criteria(data, x, 4, 3)[1], rel=1e-8, abs=1e-12)


def test_chosen_value_minimizes_curve(problem):
    for res in (cv_outcome(problem), cv_imbalance(problem), cv_riesz(problem)):
        best = min(v for _, v, _ in res.curve)
        chosen = [v for x, v, _ in res.curve if x == res.chosen or (res.selected_zero and x == 0)]
        assert chosen and min(chosen) <= best + 1e-12 * abs(best)
        assert res.selected_zero == (res.chosen == 0.0)
        assert len(res.curve[0][2]) == 5


def test_seed_determinism(problem):
    a, b = cv_imbalance(problem, seed=9), cv_imbalance(problem, seed=9)
    assert a.chosen == b.chosen and a.curve == b.curve


def test_unscaled_conversion(problem):
    res = cv_outcome(problem)
    assert res.unscaled(problem.n) == pytest.approx(res.chosen * problem.n)


def test_linf_cv_runs(rng):
    data = random_problem(rng, 40, 3)
    res = cv_imbalance(data, norm="linf", folds=3, num=9)
    assert res.chosen >= 0


def test_lasso_outcome_cv(rng):
    data = random_problem(rng, 40, 4)
    assert cv_outcome(data, "lasso", folds=3, num=9).chosen >= 0


def test_delta_equals_lambda(problem):
    res = cv_outcome(problem)
    tied = delta_equals_lambda(res)
    assert tied.chosen == res.chosen and tied.scheme is Scheme.outcome_equals_delta
    with pytest.raises(InvalidInput):
        delta_equals_lambda(cv_riesz(problem))


def test_bad_folds(problem):
    with pytest.raises(InvalidSplit):
        cv_outcome(problem, folds=1)
    with pytest.raises(InvalidSplit):
        cv_riesz(problem, folds=problem.n + 1)
    with pytest.raises(InvalidInput):
        cv_outcome(problem, family="ols")
