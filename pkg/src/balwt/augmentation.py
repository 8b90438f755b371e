"""Augmented estimators built from an outcome fit and a weight fit.

The central object is the coordinatewise mixing ratio a_j = shift_hat_j / shift_j
between the target profile and the reweighted mean; the augmented estimate is
the plug-in of (1 - a) * beta_reg + a * beta_ols.
"""
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .balancing import NormFamily, WeightFit, check_diagonal, solve_l2, solve_linf_general, solve_exact
from .dataset import ProblemData
from .errors import DegenerateWeights, InvalidInput, InvalidSplit, NotDiagonalError
from .numerics import Eigensystem, eigh_symmetric, gram_eigensystem, make_folds, min_norm_solve, spectral_solve
from .outcome_models import KernelSpec, OutcomeFit, fit_lasso, fit_ols, fit_ridge, ridge_coefficients

ZERO_SHIFT = 1e-12


@dataclass
class AugmentedFit:
    psi_hat: float
    beta_aug: np.ndarray
    a_path: np.ndarray
    beta_aug_rotated: np.ndarray
    a_path_rotated: np.ndarray
    plug_in: float
    correction: float
    beta_reg: np.ndarray
    beta_ols: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def components(self):
        return {"plug_in": self.plug_in, "weighted_residual": self.correction}


def mixing_ratio(shift_hat, shift):
    """a_j = shift_hat_j / shift_j, with a_j = 0 where |shift_j| < 1e-12."""
    shift = np.asarray(shift, dtype=float)
    out = np.zeros_like(shift)
    ok = np.abs(shift) >= ZERO_SHIFT
    out[ok] = np.asarray(shift_hat, dtype=float)[ok] / shift[ok]
    return out


def augment(outcome: OutcomeFit, weights: WeightFit, data: ProblemData) -> AugmentedFit:
    """Plug-in plus weighted-residual correction, and its coefficient form.

    For weights that are not linear in the features (mean one rather than
    zero), the correction is taken on demeaned outcomes so the estimate
    targets the same shift functional.
    """
    if outcome.beta is None:
        raise InvalidInput("augment needs an outcome fit with a coefficient vector")
    beta_reg = np.asarray(outcome.beta, dtype=float)
    if beta_reg.shape != (data.d,) or weights.weights.shape != (data.n,):
        raise InvalidInput("outcome, weights and data dimensions disagree")
    w, n = weights.weights, data.n
    plug_in = float(data.phi_q_mean @ beta_reg)
    correction = float(w @ (data.y_p - data.phi_p @ beta_reg) / n)
    if not weights.is_linear:
        correction -= float(w.mean() * data.y_p.mean())
    beta_ols = min_norm_solve(data.phi_p, data.y_p)
    shift_hat = weights.phi_q_hat
    a = mixing_ratio(shift_hat, data.phi_q_mean)
    beta_aug = (1 - a) * beta_reg + a * beta_ols

    v = gram_eigensystem(data.phi_p).eigenvectors
    a_rot = mixing_ratio(v.T @ shift_hat, v.T @ data.phi_q_mean)
    beta_rot = v @ ((1 - a_rot) * (v.T @ beta_reg) + a_rot * (v.T @ beta_ols))
    return AugmentedFit(plug_in + correction, beta_aug, a, beta_rot, a_rot, plug_in, correction, beta_reg, beta_ols)


# ---------------------------------------------------------------- double ridge

def double_ridge_gamma(sigma_sq, lam, delta):
    """gamma_j = delta lam_j / (sigma_j^2 + lam_j + delta); never exceeds lam_j."""
    sigma_sq, lam = np.broadcast_arrays(np.asarray(sigma_sq, float), np.asarray(lam, float))
    if np.any(sigma_sq < 0) or np.any(lam < 0) or delta < 0:
        raise InvalidInput("double ridge inputs must be nonnegative")
    if np.isinf(delta):
        return lam.copy()
    denom = sigma_sq + lam + delta
    out = np.zeros_like(denom)
    pos = denom > 0
    out[pos] = delta * lam[pos] / denom[pos]
    return out


def _is_diagonal(gram):
    try:
        check_diagonal(gram)
    except NotDiagonalError:
        return False
    return True


def verify_double_ridge(data: ProblemData, lam, delta: float) -> float:
    """|two-term estimate - single-ridge plug-in| / (1 + |two-term estimate|).

    Diagonal designs use lam coordinatewise. Otherwise the problem is rotated
    into the eigenbasis of phi'phi, where lam is read per spectral direction.
    """
    lam = np.broadcast_to(np.asarray(lam, float), (data.d,)).copy()
    gram = data.gram
    if _is_diagonal(gram):
        sigma_sq = np.diag(gram)
        lhs = augment(_generalized_ridge(data, lam), solve_l2(data, delta), data).psi_hat
        gamma = double_ridge_gamma(sigma_sq, lam, delta)
        rhs = data.phi_q_mean @ _generalized_ridge(data, gamma).beta
        return abs(lhs - rhs) / (1 + abs(lhs))
    eig = gram_eigensystem(data.phi_p)
    v = eig.eigenvectors
    rotated = ProblemData(data.phi_p @ v, data.y_p, v.T @ data.phi_q_mean, require_centered=False)
    lhs = augment(_generalized_ridge(rotated, lam), solve_l2(rotated, delta), rotated).psi_hat
    gamma = double_ridge_gamma(eig.eigenvalues, lam, delta)
    rhs = data.phi_q_mean @ spectral_solve(eig, gamma, data.phi_p.T @ data.y_p)
    err = abs(lhs - rhs) / (1 + abs(lhs))
    if np.all(lam == lam[0]):
        # a scalar penalty is rotation invariant, so the unrotated pipeline must agree too
        direct = augment(fit_ridge(data, float(lam[0])), solve_l2(data, delta), data).psi_hat
        err = max(err, abs(direct - rhs) / (1 + abs(direct)))
    return float(err)


def _generalized_ridge(data, lam):
    return OutcomeFit(ridge_coefficients(data.phi_p, data.y_p, lam), "generalized_ridge", lam)


def kernel_double_ridge(data: ProblemData, kernel: KernelSpec, lam: float, delta: float):
    """Two-term estimate and single-ridge form computed from Gram matrices.

    Returns (two_term, single_ridge) where the second uses dual coefficients
    U (S + gamma)^-1 U'Y with gamma from the Gram spectrum S.
    """
    x = data.phi_p
    rows = data.phi_q_rows_centered
    if rows is None:
        rows = data.phi_q_mean[None, :]
    k = kernel.gram(x)
    k_bar = kernel.gram(rows, x).mean(axis=0)
    eig = eigh_symmetric(k)
    s = np.where(eig.eigenvalues > 1e-12 * eig.eigenvalues[0], eig.eigenvalues, 0.0)
    eig = Eigensystem(s, eig.eigenvectors)
    alpha = spectral_solve(eig, lam, data.y_p)
    w_over_n = spectral_solve(eig, delta, k_bar)
    two_term = k_bar @ alpha + w_over_n @ (data.y_p - k @ alpha)
    gamma = double_ridge_gamma(s, lam, delta)
    single = k_bar @ spectral_solve(eig, gamma, data.y_p)
    return float(two_term), float(single)


def verify_double_ridge_kernel(data: ProblemData, kernel: KernelSpec, lam: float, delta: float) -> float:
    two_term, single = kernel_double_ridge(data, kernel, lam, delta)
    return abs(two_term - single) / (1 + abs(two_term))


# ---------------------------------------------------------------- l_inf and selection

def linf_beta_aug(outcome: OutcomeFit, data: ProblemData, delta: float) -> np.ndarray:
    """Piecewise coefficient form of l_inf augmentation on a diagonal design."""
    gram = data.gram
    check_diagonal(gram)
    shift = data.phi_q_mean
    beta_ols = data.phi_p.T @ data.y_p / np.diag(gram)
    a = np.zeros(data.d)
    big = (np.abs(shift) >= ZERO_SHIFT) & (np.abs(shift) > delta)
    a[big] = 1.0 - delta / np.abs(shift[big])
    return (1 - a) * outcome.beta + a * beta_ols


def double_selection_support(lasso: OutcomeFit, weights: WeightFit, data: ProblemData) -> frozenset:
    """Indices where the augmented coefficient is nonzero."""
    beta_ols = min_norm_solve(data.phi_p, data.y_p)
    a = mixing_ratio(weights.phi_q_hat, data.phi_q_mean)
    beta_aug = (1 - a) * lasso.beta + a * beta_ols
    return frozenset(int(j) for j in np.flatnonzero(beta_aug))


# ---------------------------------------------------------------- boosting, normal equations, TMLE

class BoostingView(NamedTuple):
    beta_boost: np.ndarray
    train_error_before: float
    train_error_after: float


def boosting_view(outcome: OutcomeFit, data: ProblemData, delta: float) -> BoostingView:
    """Ridge fit (penalty delta) of the base learner's residuals."""
    resid = data.y_p - data.phi_p @ outcome.beta
    if delta > 0:
        boost = ridge_coefficients(data.phi_p, resid, delta)
    else:
        boost = min_norm_solve(data.phi_p, resid)
    after = resid - data.phi_p @ boost
    return BoostingView(boost, float(resid @ resid), float(after @ after))


@dataclass
class NormalEqReport:
    violation: np.ndarray
    norm: float


def normal_eq_violation(beta, data: ProblemData) -> NormalEqReport:
    v = data.phi_p.T @ (data.y_p - data.phi_p @ np.asarray(beta, float))
    return NormalEqReport(v, float(np.linalg.norm(v)))


def factored_violation(beta_reg, a, data: ProblemData) -> np.ndarray:
    """(phi'phi)(I - diag a)(beta_ols - beta_reg)."""
    beta_ols = min_norm_solve(data.phi_p, data.y_p)
    return data.gram @ ((1 - np.asarray(a)) * (beta_ols - np.asarray(beta_reg)))


def tmle_epsilon(weights, residuals) -> float:
    weights = np.asarray(weights, float)
    ww = weights @ weights
    if ww <= 0:
        raise DegenerateWeights("weights are identically zero")
    return float(weights @ residuals / ww)


def tmle_estimate(outcome: OutcomeFit, weights: WeightFit, data: ProblemData):
    """Targeted update beta + eps * theta, returned as (estimate, eps)."""
    if weights.theta is None:
        raise InvalidInput("the targeted update needs linear weights with theta")
    eps = tmle_epsilon(weights.weights, data.y_p - data.phi_p @ outcome.beta)
    return float(data.phi_q_mean @ (outcome.beta + eps * weights.theta)), eps


def aipw_via_tmle(outcome: OutcomeFit, weights: WeightFit, data: ProblemData) -> float:
    """Augmented estimate rebuilt from the targeted step with phi_q_hat in the correction."""
    _, eps = tmle_estimate(outcome, weights, data)
    return float(data.phi_q_mean @ outcome.beta + eps * weights.phi_q_hat @ weights.theta)


# ---------------------------------------------------------------- cross-fitting

def _fit_outcome(family, data, lam):
    if family == "ols" or (family == "ridge" and lam == 0):
        return fit_ols(data)
    if family == "ridge":
        return fit_ridge(data, lam)
    if family == "lasso":
        return fit_lasso(data, lam)
    raise InvalidInput(f"unsupported outcome family {family!r}")


def _fit_weights(family, data, delta):
    if family == "exact" or (family == "l2" and delta == 0):
        return solve_exact(data)
    if family == "l2":
        return solve_l2(data, delta)
    if family == "linf":
        return solve_linf_general(data, delta)
    raise InvalidInput(f"unsupported weight family {family!r}")


def cross_fit_augment(data: ProblemData, folds: int, outcome_family="ridge", weight_family="l2",
                      hyperparams=None, seed=0):
    """Cross-fitted augmented estimate and the per-fold augmented fits.

    Nuisances fitted off fold s are applied to fold s; each per-fold fit uses
    the in-fold OLS so its coefficient identity holds exactly. Penalties are
    in the unscaled convention of the fitting functions.
    """
    hp = dict(hyperparams or {})
    lam, delta = float(hp.get("lambda", 0.0)), float(hp.get("delta", 0.0))
    if folds < 1 or folds > data.n:
        raise InvalidSplit(f"folds must be in [1, n], got {folds}")
    if folds == 1:
        fit = augment(_fit_outcome(outcome_family, data, lam), _fit_weights(weight_family, data, delta), data)
        return fit.psi_hat, [fit]
    per_fold = []
    for block in make_folds(data.n, folds, seed):
        train = np.setdiff1d(np.arange(data.n), block)
        train_data, held = data.subset(train), data.subset(block)
        outcome = _fit_outcome(outcome_family, train_data, lam)
        theta = _fit_weights(weight_family, train_data, delta).theta
        w = held.phi_p @ theta
        wf = WeightFit(w, theta, delta, NormFamily(weight_family), held.phi_p.T @ w / held.n, 0.0)
        per_fold.append(augment(outcome, wf, held))
    return float(np.mean([f.psi_hat for f in per_fold])), per_fold
