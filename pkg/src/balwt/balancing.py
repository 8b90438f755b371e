"""Balancing weights: closed forms, constrained solvers and weight diagnostics.

Linear weights are stored through dual coefficients theta with w = phi_p @ theta,
so that (1/n) w' phi_p is the reweighted source feature mean.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import linprog, minimize

from .dataset import ProblemData
from .errors import ConvergenceError, InfeasibleError, InvalidHyperparameter, NotDiagonalError
from .numerics import DEFAULT_POLICY, RankPolicy, gram_eigensystem, min_norm_solve, soft_threshold, spectral_solve
from .outcome_models import solve_lasso_gram


class NormFamily(str, Enum):
    l2 = "l2"
    linf = "linf"
    exact = "exact"
    simplex_l2 = "simplex_l2"
    external_nonlinear = "external_nonlinear"


LINEAR_FAMILIES = (NormFamily.l2, NormFamily.linf, NormFamily.exact)


@dataclass
class WeightFit:
    weights: np.ndarray
    theta: Optional[np.ndarray]
    delta: float
    norm_family: NormFamily
    phi_q_hat: np.ndarray
    imbalance: float
    intercept: float = 0.0  # simplex weights: w = max(intercept + phi theta, 0)
    info: dict = field(default_factory=dict)

    @property
    def is_linear(self):
        return self.norm_family in LINEAR_FAMILIES


def _check_delta(delta):
    delta = float(delta)
    if not np.isfinite(delta) or delta < 0:
        raise InvalidHyperparameter(f"delta must be finite and nonnegative, got {delta}")
    return delta


def _linear_fit(data, t, delta, family, phi_q_hat=None):
    theta = data.n * t
    w = data.phi_p @ theta
    if phi_q_hat is None:
        phi_q_hat = data.phi_p.T @ w / data.n
    resid = phi_q_hat - data.phi_q_mean
    imb = np.max(np.abs(resid), initial=0.0) if family is NormFamily.linf else np.linalg.norm(resid)
    return WeightFit(w, theta, delta, family, phi_q_hat, float(imb))


def solve_l2(data: ProblemData, delta: float, policy: RankPolicy = DEFAULT_POLICY) -> WeightFit:
    """Ridge-type balancing weights, (1/n) w = phi_q_mean (G + delta I)^-1 phi'.

    delta = 0 gives the min-norm exact-balance solution.
    """
    delta = _check_delta(delta)
    eig = gram_eigensystem(data.phi_p, policy)
    t = spectral_solve(eig, delta, data.phi_q_mean)
    return _linear_fit(data, t, delta, NormFamily.l2 if delta > 0 else NormFamily.exact)


def solve_exact(data: ProblemData, policy: RankPolicy = DEFAULT_POLICY) -> WeightFit:
    fit = solve_l2(data, 0.0, policy)
    fit.norm_family = NormFamily.exact
    return fit


def l2_penalized_objective(w, data: ProblemData, delta: float) -> float:
    """||(1/n) w'phi - phi_q_mean||^2 + (delta/n^2) ||w||^2."""
    n = data.n
    return float(np.sum((data.phi_p.T @ w / n - data.phi_q_mean) ** 2) + delta / n**2 * np.dot(w, w))


def check_diagonal(gram, tol=1e-10):
    d = gram.shape[0]
    off = gram - np.diag(np.diag(gram))
    limit = tol * np.trace(gram) / max(d, 1)
    if np.max(np.abs(off), initial=0.0) > limit:
        raise NotDiagonalError("phi'phi is not diagonal; rotate the design or use solve_linf_general")
    if np.any(np.diag(gram) <= 0):
        raise NotDiagonalError("phi'phi has a zero diagonal entry")


def solve_linf_diagonal(data: ProblemData, delta: float) -> WeightFit:
    """Closed-form l_inf balancing on a design with diagonal phi'phi.

    The reweighted mean is the soft-thresholded target profile.
    """
    delta = _check_delta(delta)
    gram = data.gram
    check_diagonal(gram)
    shrunk = soft_threshold(data.phi_q_mean, delta)
    t = shrunk / np.diag(gram)
    return _linear_fit(data, t, delta, NormFamily.linf, phi_q_hat=shrunk)


def linf_min_imbalance(data: ProblemData, policy: RankPolicy = DEFAULT_POLICY) -> float:
    """Smallest l_inf imbalance reachable by any weight vector (an LP)."""
    eig = gram_eigensystem(data.phi_p, policy)
    rank = int(np.sum(eig.eigenvalues > 0))
    if rank == data.d:
        return 0.0
    basis = eig.eigenvectors[:, :rank]
    b = data.phi_q_mean
    d = data.d
    # variables (c, s): minimise s with -s <= basis c - b <= s
    cost = np.zeros(rank + 1)
    cost[-1] = 1.0
    ones = np.ones((d, 1))
    a_ub = np.vstack([np.hstack([basis, -ones]), np.hstack([-basis, -ones])])
    b_ub = np.concatenate([b, -b])
    bounds = [(None, None)] * rank + [(0, None)]
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    return float(res.x[-1]) if res.status == 0 else float(np.max(np.abs(b)))


def solve_linf_general(data: ProblemData, delta: float, policy: RankPolicy = DEFAULT_POLICY) -> WeightFit:
    """Minimum-norm weights with every |(1/n) w'phi_j - phi_q_mean_j| <= delta.

    The dual in t = theta/n is 0.5 t'Gt - t'phi_q_mean + delta ||t||_1, a
    lasso in Gram form, solved by coordinate descent.
    """
    delta = _check_delta(delta)
    delta_min = linf_min_imbalance(data, policy)
    if delta < delta_min * (1 + 1e-9):
        if delta_min > 0:
            raise InfeasibleError(f"delta={delta:g} is below the minimal imbalance {delta_min:g}", delta_min)
    gram = data.gram
    if delta == 0:
        return _linear_fit(data, spectral_solve(gram_eigensystem(data.phi_p, policy), 0.0, data.phi_q_mean),
                           0.0, NormFamily.linf)
    t, sweeps, _ = solve_lasso_gram(gram, data.phi_q_mean, delta, kkt_tol=1e-10)
    fit = _linear_fit(data, t, delta, NormFamily.linf)
    fit.info.update(sweeps=sweeps, delta_min=delta_min)
    return fit


def linf_kkt_residual(fit: WeightFit, data: ProblemData) -> float:
    """Worst violation of feasibility, complementary slackness and w = phi theta.

    Scaled by max(1, ||phi_q_mean||_inf).
    """
    scale = max(1.0, float(np.max(np.abs(data.phi_q_mean), initial=0.0)))
    t = fit.theta / data.n
    resid = data.gram @ t - data.phi_q_mean
    feas = np.maximum(np.abs(resid) - fit.delta, 0.0)
    active = t != 0
    slack = np.abs(resid[active] + fit.delta * np.sign(t[active]))
    stat = np.abs(fit.weights - data.phi_p @ fit.theta) / max(1.0, np.max(np.abs(fit.weights), initial=0.0))
    return float(max(feas.max(initial=0.0) / scale, slack.max(initial=0.0) / scale, stat.max(initial=0.0)))


def riesz_loss(theta, data: ProblemData, delta: float = 0.0, norm: str = "l2") -> float:
    """theta' (phi'phi/n) theta - 2 theta' phi_q_mean + delta ||theta||."""
    theta = np.asarray(theta, dtype=float)
    fitted = data.phi_p @ theta
    quad = np.dot(fitted, fitted) / data.n
    pen = np.sum(np.abs(theta)) if norm == "l1" else np.linalg.norm(theta)
    return float(quad - 2.0 * theta @ data.phi_q_mean + delta * pen)


# ---------------------------------------------------------------- simplex

def project_simplex(v, total=1.0):
    """Euclidean projection onto {x >= 0, sum x = total}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _simplex_active_solve(phi, b, delta, support):
    """Solve the stationarity system with weights linear on ``support``."""
    ps = phi[support]
    d = phi.shape[1]
    m = np.zeros((d + 1, d + 1))
    m[:d, :d] = ps.T @ ps + delta * np.eye(d)
    m[:d, d] = ps.sum(axis=0)
    m[d, :d] = ps.sum(axis=0)
    m[d, d] = support.sum()
    rhs = np.concatenate([b, [1.0]])
    sol = np.linalg.lstsq(m, rhs, rcond=None)[0]
    return sol[:d], sol[d]


def solve_simplex_l2(data: ProblemData, delta: float, max_iter=20_000, tol=1e-12) -> WeightFit:
    """Penalized l2 balancing with w >= 0 and mean(w) = 1.

    Accelerated projected gradient on v = w/n, then an active-set polish
    that makes the weights exactly max(c + phi theta, 0) when delta > 0.
    ``theta`` and ``intercept`` are reported on the w scale.
    """
    delta = _check_delta(delta)
    phi, b, n = data.phi_p, data.phi_q_mean, data.n
    top = gram_eigensystem(phi).eigenvalues[0] if data.d else 0.0
    step = 1.0 / (2.0 * (top + delta) + 1e-300)

    def grad(v):
        return 2.0 * (phi @ (phi.T @ v - b)) + 2.0 * delta * v

    v = np.full(n, 1.0 / n)
    y, t_k = v.copy(), 1.0
    for it in range(max_iter):
        v_new = project_simplex(y - step * grad(y))
        t_new = (1 + np.sqrt(1 + 4 * t_k**2)) / 2
        y = v_new + (t_k - 1) / t_new * (v_new - v)
        change = np.max(np.abs(v_new - v))
        v, t_k = v_new, t_new
        if change < tol / n:
            break
        if it % 200 == 199 and delta > 0 and _simplex_polish(phi, b, delta, v) is not None:
            break

    theta_v, c_v = np.zeros(data.d), 0.0
    if delta > 0:
        polished = _simplex_polish(phi, b, delta, v)
        if polished is None:
            raise ConvergenceError("simplex balancing: active-set polish failed", last_iterate=n * v)
        v, theta_v, c_v = polished
    w = n * v
    phi_q_hat = phi.T @ w / n
    fit = WeightFit(w, n * theta_v, delta, NormFamily.simplex_l2, phi_q_hat,
                    float(np.linalg.norm(phi_q_hat - b)), intercept=n * c_v)
    fit.info["support_size"] = int(np.sum(w > 0))
    return fit


def _simplex_polish(phi, b, delta, v, max_rounds=100):
    support = v > 0
    seen = set()
    for _ in range(max_rounds):
        key = support.tobytes()
        if key in seen or not support.any():
            return None
        seen.add(key)
        theta, c = _simplex_active_solve(phi, b, delta, support)
        score = c + phi @ theta
        new_support = score > 0
        if np.array_equal(new_support, support):
            v = np.where(support, score, 0.0)
            # stationarity: theta = (b - phi'v)/delta, and v sums to one
            if abs(v.sum() - 1.0) > 1e-10 or np.max(np.abs(delta * theta - (b - phi.T @ v))) > 1e-10 * max(1.0, np.abs(b).max()):
                return None
            return v, theta, c
        support = new_support
    return None


def trimmed_ols_identity(fit: WeightFit, data: ProblemData):
    """Both sides of the trimming identity for nonnegative weights.

    Left: (1/n) w'Y. Right: mean(w) c+ + phi_q_hat . beta+, where (c+, beta+)
    is OLS with intercept on the rows that keep positive weight.
    """
    pos = fit.weights > 0
    design = np.column_stack([np.ones(pos.sum()), data.phi_p[pos]])
    coef = min_norm_solve(design, data.y_p[pos])
    lhs = float(fit.weights @ data.y_p / data.n)
    rhs = float(np.mean(fit.weights) * coef[0] + fit.phi_q_hat @ coef[1:])
    return lhs, rhs


# ---------------------------------------------------------------- external weights

@dataclass
class NonlinearDecomposition:
    """(1/n) w'Y split into intercept, OLS-collapsed and approximation terms."""

    weighted_mean: float
    intercept_term: float
    ols_term: float
    approx_error: float
    bound: float
    weight_residual_norm: float
    outcome_residual_norm: float

    @property
    def reconstruction(self):
        return self.intercept_term + self.ols_term + self.approx_error


def evaluate_external_weights(w, data: ProblemData, policy: RankPolicy = DEFAULT_POLICY):
    """Decompose an arbitrary weighted mean against the OLS fit.

    With centered features, (1/n) w'Y = mean(w) mean(Y) + phi_q_hat . beta_ols
    + (1/n) (w - phi eta - c)'(Y - mean(Y) - phi beta_ols), where (eta, c) is
    the least-squares projection of w on (phi, 1). The last term is bounded by
    the product of the two residual norms over n.
    """
    w = np.asarray(w, dtype=float)
    n = data.n
    if w.shape != (n,):
        raise InvalidHyperparameter(f"weights have length {w.size}, expected {n}")
    phi, y = data.phi_p, data.y_p
    beta = min_norm_solve(phi, y, policy)
    eta = min_norm_solve(phi, w, policy)
    c = w.mean()
    y_bar = y.mean()
    w_res = w - phi @ eta - c
    y_res = y - y_bar - phi @ beta
    phi_q_hat = phi.T @ w / n
    decomposition = NonlinearDecomposition(
        weighted_mean=float(w @ y / n),
        intercept_term=float(c * y_bar),
        ols_term=float(phi_q_hat @ beta),
        approx_error=float(w_res @ y_res / n),
        bound=float(np.linalg.norm(w_res) * np.linalg.norm(y_res) / n),
        weight_residual_norm=float(np.linalg.norm(w_res)),
        outcome_residual_norm=float(np.linalg.norm(y_res)),
    )
    fit = WeightFit(w.copy(), None, 0.0, NormFamily.external_nonlinear, phi_q_hat,
                    float(np.linalg.norm(phi_q_hat - data.phi_q_mean)))
    return fit, decomposition


def entropy_weights(data: ProblemData, delta: float = 0.0, slack: str = "linf",
                    tol=1e-9, max_iter=500, return_theta=False):
    """Exponential-link balancing weights normalized to mean one.

    Minimizes the dual log mean exp(phi theta) - theta' phi_q_mean plus
    delta ||theta||_1 (l_inf slack) or (delta/2) ||theta||^2 (l2 slack).
    """
    delta = _check_delta(delta)
    phi, b, d = data.phi_p, data.phi_q_mean, data.d

    def parts(theta):
        s = phi @ theta
        top = s.max()
        e = np.exp(s - top)
        p = e / e.sum()
        val = top + np.log(e.mean()) - theta @ b
        g = phi.T @ p - b
        return val, g, p

    def newton(theta, active, signs, quad):
        # damped Newton on the smooth restriction to ``active``
        for _ in range(max_iter):
            val, g, p = parts(theta)
            g_a = g[active] + (delta * signs if not quad else delta * theta[active])
            if np.max(np.abs(g_a), initial=0.0) <= tol:
                return theta, True
            pa = phi[:, active]
            mean_a = p @ pa
            hess = (pa * p[:, None]).T @ pa - np.outer(mean_a, mean_a)
            if quad:
                hess += delta * np.eye(active.sum())
            step = np.linalg.lstsq(hess, -g_a, rcond=None)[0]
            obj = lambda th: parts(th)[0] + (0.5 * delta * th @ th if quad else delta * np.abs(th).sum())

            def active_grad(th):
                g_th = parts(th)[1][active]
                return g_th + (delta * th[active] if quad else delta * signs)

            cand = theta.copy()
            cand[active] += step
            # full step first: near the optimum objective differences fall
            # below rounding, so a halved gradient also counts as progress
            if not (obj(cand) <= obj(theta) or
                    np.max(np.abs(active_grad(cand))) <= 0.5 * np.max(np.abs(g_a))):
                f0, alpha = obj(theta), 0.5
                while alpha > 1e-12:
                    cand = theta.copy()
                    cand[active] += alpha * step
                    if obj(cand) < f0 + 1e-4 * alpha * g_a @ step:
                        break
                    alpha /= 2
                else:
                    return theta, False
            theta = cand
        return theta, False

    if delta == 0 or slack == "l2":
        theta, ok = newton(np.zeros(d), np.ones(d, bool), np.zeros(d), quad=True)
    else:
        # split theta = a - b with a, b >= 0 to find the sign pattern, then polish
        def split_obj(z):
            th = z[:d] - z[d:]
            val, g, _ = parts(th)
            return val + delta * z.sum(), np.concatenate([g + delta, -g + delta])

        res = minimize(split_obj, np.zeros(2 * d), jac=True, method="L-BFGS-B",
                       bounds=[(0, None)] * (2 * d), options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
        theta = res.x[:d] - res.x[d:]
        ok = False
        for _ in range(20):
            active = np.abs(theta) > 1e-10
            if not active.any():
                ok = np.max(np.abs(parts(theta)[1])) <= delta + tol
                break
            theta = np.where(active, theta, 0.0)
            signs = np.sign(theta[active])
            theta, conv = newton(theta, active, signs, quad=False)
            g = parts(theta)[1]
            inactive_ok = np.all(np.abs(g[~active]) <= delta + tol)
            signs_ok = np.all(np.sign(theta[active]) == signs)
            if conv and inactive_ok and signs_ok:
                ok = True
                break
            if not signs_ok:
                theta[active] = np.where(np.sign(theta[active]) == signs, theta[active], 0.0)
            else:
                viol = np.flatnonzero(~active & (np.abs(g) > delta + tol))
                theta[viol] = -np.sign(g[viol]) * 1e-8
    if not ok:
        raise ConvergenceError("entropy balancing dual did not converge", last_iterate=theta)
    s = phi @ theta
    w = np.exp(s - s.max())
    w = w / w.mean()
    return (w, theta) if return_theta else w
