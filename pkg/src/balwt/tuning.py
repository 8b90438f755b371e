"""Cross-validated choice of outcome and weight hyperparameters.

All hyperparameters here are per-sample: a training fold of size m is fit
with penalty m * value, so values are comparable across fold sizes and with
the oracle. Multiply by n before passing a choice to the unscaled fitting
functions (see TuningResult.unscaled).
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .balancing import solve_linf_general
from .dataset import ProblemData
from .errors import InfeasibleError, InvalidInput, InvalidSplit
from .numerics import gram_eigensystem, log_grid_minimize, make_folds
from .outcome_models import fit_lasso

GRID_POINTS = 49
GRID_LO, GRID_HI = 1e-8, 1e4
ZERO_CUTOFF = 1e-10


class Scheme(str, Enum):
    cv_outcome_mse = "cv_outcome_mse"
    cv_imbalance = "cv_imbalance"
    cv_riesz = "cv_riesz"
    outcome_equals_delta = "outcome_equals_delta"


@dataclass
class TuningResult:
    chosen: float
    curve: list  # (value, mean criterion, per-fold criteria)
    scheme: Scheme
    selected_zero: bool
    scale: float = 1.0
    info: dict = field(default_factory=dict)

    def unscaled(self, n):
        return self.chosen * n


class FoldPlan:
    """Fold assignment plus design-only quantities reused across schemes."""

    def __init__(self, phi, folds=5, seed=0):
        n = phi.shape[0]
        if folds < 2:
            raise InvalidSplit("cross-validation needs at least 2 folds")
        if folds > n:
            raise InvalidSplit(f"{folds} folds for {n} rows")
        self.phi = phi
        self.folds = folds
        self.seed = seed
        self.blocks = make_folds(n, folds, seed)
        self.scale = float(np.mean(np.sum(phi**2, axis=0)) / n)
        self._weight_cache = None
        self._outcome_cache = None

    def pairs(self):
        n = self.phi.shape[0]
        for block in self.blocks:
            yield np.setdiff1d(np.arange(n), block), block

    def weight_parts(self):
        # eigenbasis of the training covariance and held-out covariance, in
        # the parent centering frame
        if self._weight_cache is None:
            parts = []
            for train, held in self.pairs():
                eig = gram_eigensystem(self.phi[train])
                v = eig.eigenvectors
                s = eig.eigenvalues / len(train)
                ph = self.phi[held] @ v
                parts.append((v, s, ph.T @ ph / len(held)))
            self._weight_cache = parts
        return self._weight_cache

    def outcome_parts(self):
        # per fold: training mean, SVD of the re-centered training design and
        # held-out rows projected on its right singular vectors
        if self._outcome_cache is None:
            parts = []
            for train, held in self.pairs():
                mean = self.phi[train].mean(axis=0)
                u, sv, vt = np.linalg.svd(self.phi[train] - mean, full_matrices=False)
                keep = sv > 1e-12 * sv.max(initial=0.0)
                parts.append((mean, u[:, keep], sv[keep], (self.phi[held] - mean) @ vt[keep].T))
            self._outcome_cache = parts
        return self._outcome_cache


def _grid_bounds(plan):
    return GRID_LO * plan.scale, GRID_HI * plan.scale


def _select(scheme, plan, criterion, num):
    """Grid + refinement over a per-fold criterion function value -> list."""
    per_fold = {}

    def mean_crit(x):
        vals = criterion(x)
        per_fold[x] = vals
        return float(np.mean(vals))

    lo, hi = _grid_bounds(plan)
    best, _, evals = log_grid_minimize(mean_crit, lo, hi, num=num)
    if best < ZERO_CUTOFF * plan.scale:
        best = 0.0
    curve = [(x, v, list(per_fold[x])) for x, v in evals]
    return TuningResult(best, curve, scheme, best == 0.0, plan.scale,
                        {"folds": plan.folds, "seed": plan.seed})


def _outcome_criterion(plan, y, family):
    parts = plan.outcome_parts()

    def crit(lam):
        out = []
        for (train, held), (mean, u, sv, ph) in zip(plan.pairs(), parts):
            y_tr = y[train]
            y_bar = y_tr.mean()
            if family == "ridge":
                coef = sv / (sv**2 + len(train) * lam) * (u.T @ (y_tr - y_bar))
                pred = y_bar + ph @ coef
            else:
                sub = ProblemData(plan.phi[train] - mean, y_tr - y_bar, np.zeros(plan.phi.shape[1]),
                                  require_centered=False)
                beta = fit_lasso(sub, max(lam, 1e-300) * len(train)).beta
                pred = y_bar + (plan.phi[held] - mean) @ beta
            out.append(float(np.mean((y[held] - pred) ** 2)))
        return out

    return crit


def cv_outcome(data: ProblemData, family="ridge", folds=5, seed=0, num=GRID_POINTS, plan=None) -> TuningResult:
    """Choose the outcome penalty by held-out squared error (intercept refit per fold)."""
    if family not in ("ridge", "lasso"):
        raise InvalidInput(f"cv_outcome supports ridge and lasso, not {family!r}")
    plan = plan or FoldPlan(data.phi_p, folds, seed)
    return _select(Scheme.cv_outcome_mse, plan, _outcome_criterion(plan, data.y_p, family), num)


def cv_outcome_criterion(data: ProblemData, lam, family="ridge", folds=5, seed=0):
    plan = FoldPlan(data.phi_p, folds, seed)
    return float(np.mean(_outcome_criterion(plan, data.y_p, family)(lam)))


def _weight_criterion(plan, target, kind, norm):
    if norm == "linf":
        return _linf_weight_criterion(plan, target, kind)
    parts = plan.weight_parts()

    def crit(delta):
        out = []
        for v, s, cov_h in parts:
            c = v.T @ target
            den = s + delta
            coef = np.where(den > 0, c / np.where(den > 0, den, 1.0), 0.0)  # theta in the eigenbasis
            moved = cov_h @ coef
            if kind == "imbalance":
                out.append(float(np.sum((moved - c) ** 2)))
            else:
                out.append(float(coef @ moved - 2.0 * coef @ c))
        return out

    return crit


def _linf_weight_criterion(plan, target, kind):
    def crit(delta):
        out = []
        for train, held in plan.pairs():
            sub = ProblemData(plan.phi[train], np.zeros(len(train)), target, require_centered=False)
            try:
                theta = solve_linf_general(sub, delta).theta / len(train)
            except InfeasibleError:
                out.append(np.inf)
                continue
            ph = plan.phi[held]
            moved = ph.T @ (ph @ theta) / len(held)
            if kind == "imbalance":
                out.append(float(np.max(np.abs(moved - target)) ** 2))
            else:
                out.append(float(theta @ moved - 2.0 * theta @ target))
        return out

    return crit


def cv_imbalance(data: ProblemData, norm="l2", folds=5, seed=0, num=GRID_POINTS, plan=None) -> TuningResult:
    """Choose delta by the held-out imbalance of weights fit on the other folds.

    Imbalance is measured against the full-sample target profile.
    """
    plan = plan or FoldPlan(data.phi_p, folds, seed)
    return _select(Scheme.cv_imbalance, plan, _weight_criterion(plan, data.phi_q_mean, "imbalance", norm), num)


def cv_riesz(data: ProblemData, norm="l2", folds=5, seed=0, num=GRID_POINTS, plan=None) -> TuningResult:
    """Choose delta by the held-out Riesz loss theta' S_held theta - 2 theta' target."""
    plan = plan or FoldPlan(data.phi_p, folds, seed)
    return _select(Scheme.cv_riesz, plan, _weight_criterion(plan, data.phi_q_mean, "riesz", norm), num)


def delta_equals_lambda(outcome_result: TuningResult) -> TuningResult:
    if outcome_result.scheme is not Scheme.cv_outcome_mse:
        raise InvalidInput("delta_equals_lambda expects a cv_outcome result")
    return TuningResult(outcome_result.chosen, outcome_result.curve, Scheme.outcome_equals_delta,
                        outcome_result.selected_zero, outcome_result.scale, dict(outcome_result.info))
