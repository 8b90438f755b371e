"""Numerical checks of the estimator identities on random instances.

Each check returns a nonnegative violation per instance; a check passes when
its largest violation stays below its tolerance. ``perturb`` names a check
whose left-hand side is nudged by 1e-3, as a negative control.
"""
from dataclasses import dataclass

import numpy as np

from . import augmentation as aug
from . import balancing as bal
from .dataset import ProblemData
from .instances import diagonal_problem, random_problem
from .numerics import gram_eigensystem, min_norm_solve, relative_error
from .outcome_models import KernelSpec, fit_lasso, fit_ols, fit_ridge, lasso_diagonal


@dataclass
class IdentityReport:
    name: str
    max_violation: float
    tolerance: float
    instances: int

    @property
    def passed(self):
        return self.max_violation <= self.tolerance


def _rel(a, b):
    return relative_error(a, b)


def _sizes(rng, wide=False):
    if wide:
        n = int(rng.integers(5, 30))
        return n, int(rng.integers(n + 1, n + 30))
    return int(rng.integers(20, 101)), int(rng.integers(2, 16))


def check_core_equivalence(rng, bump):
    data = random_problem(rng, *_sizes(rng, wide=rng.random() < 0.2))
    beta_ols = fit_ols(data).beta
    worst = 0.0
    for _ in range(5):
        w = data.phi_p @ rng.standard_normal(data.d)
        lhs = w @ data.y_p / data.n + bump
        worst = max(worst, _rel(lhs, (data.phi_p.T @ w / data.n) @ beta_ols))
    return worst


def _random_linear_weights(rng, data):
    theta = rng.standard_normal(data.d)
    w = data.phi_p @ theta
    return bal.WeightFit(w, theta, 0.0, bal.NormFamily.l2, data.phi_p.T @ w / data.n, 0.0)


def check_affine_combination(rng, bump):
    data = random_problem(rng, *_sizes(rng))
    fit = aug.augment(fit_ridge(data, rng.uniform(0.1, 10)), _random_linear_weights(rng, data), data)
    return _rel(fit.psi_hat + bump, data.phi_q_mean @ fit.beta_aug)


def check_rotated_combination(rng, bump):
    data = random_problem(rng, *_sizes(rng))
    fit = aug.augment(fit_ridge(data, rng.uniform(0.1, 10)), solve_l2_random(rng, data), data)
    return _rel(fit.psi_hat + bump, data.phi_q_mean @ fit.beta_aug_rotated)


def solve_l2_random(rng, data):
    return bal.solve_l2(data, rng.uniform(0.01, 10) * data.n)


def check_collapse_exact(rng, bump):
    data = random_problem(rng, *_sizes(rng))
    fit = aug.augment(fit_ridge(data, rng.uniform(0.1, 10)), bal.solve_exact(data), data)
    return _rel(fit.psi_hat + bump, data.phi_q_mean @ fit_ols(data).beta)


def check_collapse_ols_base(rng, bump):
    data = random_problem(rng, *_sizes(rng))
    fit = aug.augment(fit_ols(data), _random_linear_weights(rng, data), data)
    return _rel(fit.psi_hat + bump, data.phi_q_mean @ fit_ols(data).beta)


def check_l2_closed_form(rng, bump):
    data = random_problem(rng, *_sizes(rng))
    delta = rng.uniform(0.1, 10) * data.n
    n = data.n
    # penalized objective as one stacked least-squares problem in w
    a = np.vstack([data.phi_p.T / n, np.sqrt(delta) / n * np.eye(n)])
    b = np.concatenate([data.phi_q_mean, np.zeros(n)])
    w_ref = np.linalg.lstsq(a, b, rcond=None)[0]
    w = bal.solve_l2(data, delta).weights
    return _rel(w + bump, w_ref)


def check_boosting(rng, bump):
    data = random_problem(rng, *_sizes(rng))
    delta = rng.uniform(0.1, 10) * data.n
    base = fit_ridge(data, rng.uniform(0.1, 10) * data.n)
    view = aug.boosting_view(base, data, delta)
    fit = aug.augment(base, bal.solve_l2(data, delta), data)
    err = _rel(base.beta + view.beta_boost + bump, fit.beta_aug_rotated)
    rise = max(view.train_error_after - view.train_error_before, 0.0) / (1 + view.train_error_before)
    return max(err, rise)


def check_double_ridge_diagonal(rng, bump):
    data = diagonal_problem(rng, int(rng.integers(20, 101)), int(rng.integers(2, 12)))
    lam = rng.uniform(0, 5, data.d) * data.n
    return aug.verify_double_ridge(data, lam, rng.uniform(0.01, 5) * data.n) + abs(bump)


def check_double_ridge_correlated(rng, bump):
    data = random_problem(rng, *_sizes(rng, wide=rng.random() < 0.2))
    return aug.verify_double_ridge(data, rng.uniform(0.01, 5) * data.n, rng.uniform(0.01, 5) * data.n) + abs(bump)


def check_double_ridge_kernel(rng, bump):
    data = random_problem(rng, *_sizes(rng))
    lam, delta = rng.uniform(0.01, 5) * data.n, rng.uniform(0.01, 5) * data.n
    two_term, single = aug.kernel_double_ridge(data, KernelSpec("linear"), lam, delta)
    primal = aug.augment(fit_ridge(data, lam), bal.solve_l2(data, delta), data).psi_hat
    return max(_rel(two_term + bump, single), _rel(two_term, primal))


def check_linf_closed_form(rng, bump):
    data = diagonal_problem(rng, int(rng.integers(20, 101)), int(rng.integers(2, 12)))
    delta = rng.uniform(0, 1.2) * np.max(np.abs(data.phi_q_mean))
    closed = bal.solve_linf_diagonal(data, delta).phi_q_hat
    general = bal.solve_linf_general(data, delta).phi_q_hat
    return float(np.max(np.abs(closed + bump - general)))


def check_linf_kkt(rng, bump):
    data = random_problem(rng, int(rng.integers(30, 101)), int(rng.integers(2, 10)))
    delta = rng.uniform(0.05, 0.8) * np.max(np.abs(data.phi_q_mean))
    return bal.linf_kkt_residual(bal.solve_linf_general(data, delta), data) + abs(bump)


def check_linf_coefficients(rng, bump):
    data = diagonal_problem(rng, int(rng.integers(20, 101)), int(rng.integers(2, 12)))
    delta = rng.uniform(0, 1.2) * np.max(np.abs(data.phi_q_mean))
    base = fit_ridge(data, rng.uniform(0.1, 5) * data.n)
    fit = aug.augment(base, bal.solve_linf_diagonal(data, delta), data)
    return _rel(aug.linf_beta_aug(base, data, delta) + bump, fit.beta_aug)


def check_double_selection(rng, bump):
    data = diagonal_problem(rng, int(rng.integers(30, 101)), int(rng.integers(4, 13)))
    xty = np.abs(data.phi_p.T @ data.y_p)
    lasso = fit_lasso(data, rng.uniform(0.2, 0.9) * xty.max())
    weights = bal.solve_linf_diagonal(data, rng.uniform(0.2, 0.9) * np.max(np.abs(data.phi_q_mean)))
    union = set(np.flatnonzero(lasso.beta)) | set(np.flatnonzero(weights.phi_q_hat))
    support = set(aug.double_selection_support(lasso, weights, data))
    return float(len(support ^ union)) + abs(bump) * 1e3


def check_nonlinear_decomposition(rng, bump):
    data = random_problem(rng, *_sizes(rng, wide=rng.random() < 0.2))
    w = np.exp(0.3 * data.phi_p @ rng.standard_normal(data.d) / np.sqrt(data.d))
    _, dec = bal.evaluate_external_weights(w / w.mean(), data)
    return _rel(dec.weighted_mean + bump, dec.reconstruction)


def check_simplex_trimming(rng, bump):
    data = random_problem(rng, int(rng.integers(30, 80)), int(rng.integers(2, 5)), shift_scale=2.0)
    fit = bal.solve_simplex_l2(data, rng.uniform(0.5, 5.0))
    lhs, rhs = bal.trimmed_ols_identity(fit, data)
    return _rel(lhs + bump, rhs)


def check_norm_ordering(rng, bump):
    data = random_problem(rng, *_sizes(rng))
    lam = rng.uniform(0.01, 10) * data.n
    ridge = fit_ridge(data, lam)
    fit = aug.augment(ridge, bal.solve_l2(data, rng.uniform(0.01, 10) * data.n), data)
    a, b, c = (np.linalg.norm(x) for x in (ridge.beta, fit.beta_aug_rotated, fit.beta_ols))
    return max(a - b, b - c, 0.0) / (1 + c) + abs(bump)


def check_normal_equations(rng, bump):
    data = diagonal_problem(rng, int(rng.integers(20, 101)), int(rng.integers(2, 12)))
    base = fit_ridge(data, rng.uniform(0.1, 5) * data.n)
    fit = aug.augment(base, bal.solve_l2(data, rng.uniform(0.1, 5) * data.n), data)
    direct = aug.normal_eq_violation(fit.beta_aug, data).violation
    factored = aug.factored_violation(base.beta, fit.a_path, data)
    scale = 1 + np.linalg.norm(data.phi_p.T @ data.y_p)
    return float(np.max(np.abs(direct + bump * scale - factored)) / scale)


def check_tmle_bridge(rng, bump):
    data = random_problem(rng, *_sizes(rng))
    base = fit_ridge(data, rng.uniform(0.1, 10) * data.n)
    weights = bal.solve_l2(data, rng.uniform(0.1, 10) * data.n)
    fit = aug.augment(base, weights, data)
    return _rel(fit.psi_hat + bump, aug.aipw_via_tmle(base, weights, data))


CHECKS = {
    "core_equivalence": (check_core_equivalence, 1e-8),
    "affine_combination": (check_affine_combination, 1e-10),
    "rotated_combination": (check_rotated_combination, 1e-10),
    "collapse_exact_balance": (check_collapse_exact, 1e-9),
    "collapse_ols_base": (check_collapse_ols_base, 1e-9),
    "l2_closed_form": (check_l2_closed_form, 1e-8),
    "boosting_view": (check_boosting, 1e-9),
    "double_ridge_diagonal": (check_double_ridge_diagonal, 1e-9),
    "double_ridge_correlated": (check_double_ridge_correlated, 1e-9),
    "double_ridge_kernel": (check_double_ridge_kernel, 1e-8),
    "linf_closed_form": (check_linf_closed_form, 1e-6),
    "linf_kkt": (check_linf_kkt, 1e-6),
    "linf_coefficients": (check_linf_coefficients, 1e-10),
    "double_selection": (check_double_selection, 0.0),
    "nonlinear_decomposition": (check_nonlinear_decomposition, 1e-10),
    "simplex_trimming": (check_simplex_trimming, 1e-7),
    "norm_ordering": (check_norm_ordering, 1e-9),
    "normal_equation_factorization": (check_normal_equations, 1e-8),
    "tmle_bridge": (check_tmle_bridge, 1e-10),
}


def run_suite(instances=20, seed=0, perturb=None, names=None):
    """Run every check (or ``names``) over ``instances`` random draws."""
    if perturb is not None and perturb not in CHECKS:
        raise KeyError(f"unknown identity {perturb!r}")
    reports = []
    for k, name in enumerate(names or CHECKS):
        check, tol = CHECKS[name]
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        bump = 1e-3 if name == perturb else 0.0
        worst = max(check(rng, bump) for _ in range(instances))
        reports.append(IdentityReport(name, float(worst), tol, instances))
    return reports
