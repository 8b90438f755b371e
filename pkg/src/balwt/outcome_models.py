"""Linear base learners: min-norm OLS, (generalized) ridge, lasso, kernel ridge."""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .dataset import ProblemData
from .errors import ConvergenceError, InvalidHyperparameter
from .numerics import DEFAULT_POLICY, RankPolicy, min_norm_solve, pseudoinverse, soft_threshold


class OutcomeFamily(str, Enum):
    ols = "ols"
    ridge = "ridge"
    generalized_ridge = "generalized_ridge"
    lasso = "lasso"
    kernel_ridge = "kernel_ridge"


class KernelKind(str, Enum):
    linear = "linear"
    gaussian = "gaussian"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = KernelKind.linear
    bandwidth: float = 1.0

    def gram(self, x, z=None):
        x = np.atleast_2d(x)
        z = x if z is None else np.atleast_2d(z)
        if KernelKind(self.kind) is KernelKind.linear:
            return x @ z.T
        if self.bandwidth <= 0:
            raise InvalidHyperparameter("gaussian bandwidth must be positive")
        sq = (x**2).sum(1)[:, None] + (z**2).sum(1)[None, :] - 2.0 * x @ z.T
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.bandwidth**2))


@dataclass
class OutcomeFit:
    beta: Optional[np.ndarray]
    family: OutcomeFamily
    lam: object = 0.0  # scalar, or a d-vector for generalized ridge
    dual_alpha: Optional[np.ndarray] = None
    kernel: Optional[KernelSpec] = None
    source_prediction: Optional[np.ndarray] = None
    target_prediction: Optional[float] = None
    iterations: int = 0
    kkt_residual: float = 0.0

    def plug_in(self, data: ProblemData) -> float:
        if self.beta is not None:
            return float(data.phi_q_mean @ self.beta)
        return float(self.target_prediction)

    def fitted(self, data: ProblemData) -> np.ndarray:
        if self.beta is not None:
            return data.phi_p @ self.beta
        return self.source_prediction


def _check_penalty(lam, d=None):
    lam = np.asarray(lam, dtype=float)
    if not np.all(np.isfinite(lam)) or np.any(lam < 0):
        raise InvalidHyperparameter(f"penalty must be finite and nonnegative, got {lam}")
    if d is not None and lam.ndim and lam.shape != (d,):
        raise InvalidHyperparameter(f"penalty vector has length {lam.size}, expected {d}")
    return lam


def fit_ols(data: ProblemData, policy: RankPolicy = DEFAULT_POLICY) -> OutcomeFit:
    beta = min_norm_solve(data.phi_p, data.y_p, policy)
    return OutcomeFit(beta, OutcomeFamily.ols, 0.0)


def ridge_coefficients(phi, y, lam, policy: RankPolicy = DEFAULT_POLICY):
    """argmin ||y - phi b||^2 + b' diag(lam) b as an augmented least-squares problem.

    Zero penalties fall back to the min-norm solution in those directions.
    """
    d = phi.shape[1]
    root = np.sqrt(np.broadcast_to(lam, (d,)))
    a = np.vstack([phi, np.diag(root)])
    b = np.concatenate([y, np.zeros(d)])
    return min_norm_solve(a, b, policy)


def fit_generalized_ridge(data: ProblemData, lam, policy: RankPolicy = DEFAULT_POLICY) -> OutcomeFit:
    lam = _check_penalty(lam, data.d)
    if not np.any(lam):
        return OutcomeFit(fit_ols(data, policy).beta, OutcomeFamily.generalized_ridge, lam.copy())
    beta = ridge_coefficients(data.phi_p, data.y_p, lam, policy)
    return OutcomeFit(beta, OutcomeFamily.generalized_ridge, np.broadcast_to(lam, (data.d,)).copy())


def fit_ridge(data: ProblemData, lam: float, policy: RankPolicy = DEFAULT_POLICY) -> OutcomeFit:
    lam = float(_check_penalty(lam))
    if lam == 0.0:
        beta = fit_ols(data, policy).beta
    else:
        beta = ridge_coefficients(data.phi_p, data.y_p, lam, policy)
    return OutcomeFit(beta, OutcomeFamily.ridge, lam)


def lasso_kkt_residual(gram, xty, beta, lam):
    """Largest violation of the lasso subgradient conditions."""
    grad = xty - gram @ beta
    active = beta != 0
    viol = np.where(active, np.abs(grad - lam * np.sign(beta)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(viol.max(initial=0.0))


def _polish_active_set(gram, xty, beta, lam):
    active = np.flatnonzero(beta)
    if active.size == 0:
        return None
    signs = np.sign(beta[active])
    sub = gram[np.ix_(active, active)]
    sol, *_ = np.linalg.lstsq(sub, xty[active] - lam * signs, rcond=None)
    if np.any(np.sign(sol) != signs):
        return None
    out = np.zeros_like(beta)
    out[active] = sol
    return out


def lasso_coordinate_descent(gram, xty, lam, beta0=None, tol=1e-9, kkt_tol=1e-7, max_sweeps=100_000):
    """Cyclic coordinate descent for 0.5 b'Gb - b'c + lam ||b||_1.

    Works on the Gram matrix so a sweep costs O(d^2). The change test is on
    the coefficient scale; the KKT residual is relative to max(1, ||c||_inf).
    """
    d = gram.shape[0]
    diag = np.diag(gram).copy()
    beta = np.zeros(d) if beta0 is None else np.array(beta0, dtype=float)
    grad = xty - gram @ beta  # c - G beta, kept current
    scale = max(1.0, float(np.max(np.abs(xty), initial=0.0)))
    for sweep in range(1, max_sweeps + 1):
        if sweep % 50 == 0:
            # on ill-conditioned Gram matrices plain sweeps crawl; once the
            # sign pattern has settled one linear solve finishes the job
            polished = _polish_active_set(gram, xty, beta, lam)
            if polished is not None and lasso_kkt_residual(gram, xty, polished, lam) / scale <= kkt_tol * 1e-3:
                return polished, sweep, lasso_kkt_residual(gram, xty, polished, lam) / scale

        max_change = 0.0
        for j in range(d):
            if diag[j] <= 0:
                if beta[j] != 0:
                    grad += gram[:, j] * beta[j]
                    beta[j] = 0.0
                continue
            old = beta[j]
            z = grad[j] + diag[j] * old
            new = np.sign(z) * max(abs(z) - lam, 0.0) / diag[j]
            if new != old:
                grad -= gram[:, j] * (new - old)
                beta[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol * max(1.0, float(np.max(np.abs(beta), initial=0.0))):
            # refresh the running gradient to shed accumulated rounding
            grad = xty - gram @ beta
            kkt = lasso_kkt_residual(gram, xty, beta, lam) / scale
            if kkt <= kkt_tol:
                return beta, sweep, kkt
    raise ConvergenceError(f"lasso did not converge in {max_sweeps} sweeps", last_iterate=beta, iterations=max_sweeps)


def lasso_homotopy(gram, xty, lam, max_steps=None):
    """Exact lasso solution by following the piecewise-linear path from max|c| down to lam.

    Each step solves on the active set and moves to the next point where a
    coordinate joins or leaves it. Near-ties on ill-conditioned Gram matrices
    can leave a coordinate with the wrong sign, so the end point is refined
    on its support when the KKT conditions fail.
    """
    beta = _homotopy_path(gram, xty, lam, max_steps)
    scale = max(1.0, float(np.max(np.abs(xty), initial=0.0)))
    if lasso_kkt_residual(gram, xty, beta, lam) > 1e-12 * scale:
        beta = _refine_active_set(gram, xty, beta, lam)
    return beta


def _homotopy_path(gram, xty, lam, max_steps=None):
    d = gram.shape[0]
    beta = np.zeros(d)
    lam_now = float(np.max(np.abs(xty), initial=0.0))
    if lam >= lam_now:
        return beta
    active = [int(np.argmax(np.abs(xty)))]
    signs = {active[0]: float(np.sign(xty[active[0]]))}
    for _ in range(max_steps or 20 * d + 10):
        idx = np.array(active)
        s = np.array([signs[j] for j in active])
        sub_inv = np.linalg.pinv(gram[np.ix_(idx, idx)])
        p = sub_inv @ xty[idx]
        u = sub_inv @ s
        # inactive correlations along the path: r_j(l) = base_j + l a_j
        a = gram[:, idx] @ u
        base = xty - gram[:, idx] @ p
        best, event = lam, None
        for j in range(d):
            if j in signs:
                continue
            for sign in (1.0, -1.0):
                den = sign - a[j]
                if abs(den) > 1e-14:
                    l_j = base[j] / den
                    if best < l_j < lam_now * (1 - 1e-12):
                        best, event = l_j, ("add", j, sign)
        for k, j in enumerate(active):
            if abs(u[k]) > 1e-14:
                l_j = p[k] / u[k]
                if best < l_j < lam_now * (1 - 1e-12):
                    best, event = l_j, ("drop", j, 0.0)
        lam_now = best
        beta = np.zeros(d)
        beta[idx] = p - lam_now * u
        if event is None:
            return beta
        kind, j, sign = event
        if kind == "add":
            active.append(j)
            signs[j] = sign
        else:
            active.remove(j)
            del signs[j]
            beta[j] = 0.0
        if not active:
            return beta
    raise ConvergenceError("lasso homotopy exceeded its step budget", last_iterate=beta)


def _refine_active_set(gram, xty, beta, lam, rounds=50):
    """Re-solve on the support with signs taken from beta, adding KKT violators."""
    beta = beta.copy()
    for _ in range(rounds):
        grad = xty - gram @ beta
        signs = np.sign(beta)
        viol = (beta == 0) & (np.abs(grad) > lam * (1 + 1e-12))
        signs[viol] = np.sign(grad[viol])
        active = np.flatnonzero(signs)
        if active.size == 0:
            return beta
        sol = np.linalg.lstsq(gram[np.ix_(active, active)], xty[active] - lam * signs[active], rcond=None)[0]
        new = np.zeros_like(beta)
        keep = np.sign(sol) == signs[active]
        new[active[keep]] = sol[keep]
        if not viol.any() and keep.all():
            return new
        beta = new
    return beta


def solve_lasso_gram(gram, xty, lam, beta0=None, kkt_tol=1e-7, max_sweeps=5000):
    """Coordinate descent, falling back to the homotopy when it stalls."""
    try:
        return lasso_coordinate_descent(gram, xty, lam, beta0=beta0, kkt_tol=kkt_tol, max_sweeps=max_sweeps)
    except ConvergenceError as exc:
        stalled = exc
    beta = lasso_homotopy(gram, xty, lam)
    scale = max(1.0, float(np.max(np.abs(xty), initial=0.0)))
    kkt = lasso_kkt_residual(gram, xty, beta, lam) / scale
    if kkt > kkt_tol:
        # the homotopy result is a good warm start for a last round of sweeps
        try:
            return lasso_coordinate_descent(gram, xty, lam, beta0=beta, kkt_tol=kkt_tol, max_sweeps=max_sweeps)
        except ConvergenceError:
            raise ConvergenceError(f"lasso did not converge (KKT residual {kkt:.2e})",
                                   last_iterate=stalled.last_iterate, iterations=stalled.iterations) from None
    return beta, stalled.iterations, kkt


def fit_lasso(data: ProblemData, lam: float, beta0=None, max_sweeps=5000) -> OutcomeFit:
    """Lasso for 0.5||y - phi b||^2 + lam ||b||_1 on the centered design."""
    lam = float(_check_penalty(lam))
    if lam <= 0:
        raise InvalidHyperparameter("lasso penalty must be positive")
    gram = data.gram
    xty = data.phi_p.T @ data.y_p
    beta, sweeps, kkt = solve_lasso_gram(gram, xty, lam, beta0=beta0, max_sweeps=max_sweeps)
    return OutcomeFit(beta, OutcomeFamily.lasso, lam, iterations=sweeps, kkt_residual=kkt)


def lasso_diagonal(data: ProblemData, lam: float):
    """Closed-form lasso when phi'phi is diagonal: soft-thresholded OLS."""
    diag = np.diag(data.gram)
    return soft_threshold(data.phi_p.T @ data.y_p, lam) / diag


def fit_kernel_ridge(data: ProblemData, kernel: KernelSpec, lam: float,
                     policy: RankPolicy = DEFAULT_POLICY) -> OutcomeFit:
    """Kernel ridge on the centered source features.

    Target predictions use the centered target rows when available and the
    target mean profile otherwise. With the linear kernel ``beta`` is the
    primal coefficient vector phi' alpha.
    """
    lam = float(_check_penalty(lam))
    k = kernel.gram(data.phi_p)
    if lam > 0:
        alpha = np.linalg.solve(k + lam * np.eye(data.n), data.y_p)
    else:
        alpha = pseudoinverse(k, policy) @ data.y_p
    rows = data.phi_q_rows_centered
    if rows is None:
        rows = data.phi_q_mean[None, :]
    target = float(np.mean(kernel.gram(rows, data.phi_p) @ alpha))
    beta = data.phi_p.T @ alpha if KernelKind(kernel.kind) is KernelKind.linear else None
    return OutcomeFit(beta, OutcomeFamily.kernel_ridge, lam, dual_alpha=alpha, kernel=kernel,
                      source_prediction=k @ alpha, target_prediction=target)
