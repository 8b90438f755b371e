"""Synthetic and semi-synthetic data-generating processes and the tuning study."""
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import ProblemData
from .numerics import eigh_symmetric, random_rotation
from .oracle_mse import DgpTruth, augmented_mse, oracle_hyperparams
from .outcome_models import fit_ridge
from .tuning import FoldPlan, cv_imbalance, cv_outcome, cv_riesz

SCHEMES = ("cv_imbalance", "cv_riesz", "cv_outcome")

# (eta_min, eta_max, curvature) of the three population spectra
SETTINGS = {
    1: (1e-4, 3.0, 5000.0),
    2: (1e-8, 3.0, 5000.0),
    3: (1e-10, 5.0, 10.0),
}
NOISE_LEVELS = (0.1, 2.0)


@dataclass
class SyntheticDgpSpec:
    eta_min: float
    eta_max: float
    curvature_c: float
    noise_var: float
    target_kind: str = "random_unit"  # or "constant"
    target_value: float = 0.1
    target_seed: int = 0
    n: int = 2000
    d: int = 50
    seed: int = 0
    name: str = ""


def eigenvalue_grid(eta_min, eta_max, c, d):
    """Equally spaced grid between eta^(1/c) endpoints, raised to the c-th power."""
    if not eta_min < eta_max:
        raise ValueError("eta_min must be below eta_max")
    grid = np.linspace(eta_min ** (1.0 / c), eta_max ** (1.0 / c), d) ** c
    return np.clip(grid, eta_min, eta_max)[::-1]


def target_vector(spec: SyntheticDgpSpec):
    if spec.target_kind == "constant":
        return np.full(spec.d, float(spec.target_value))
    rng = np.random.default_rng(np.random.SeedSequence(spec.target_seed, spawn_key=(7,)))
    t = rng.uniform(-1.0, 1.0, spec.d)
    return t / np.linalg.norm(t)


def generate_synthetic(spec: SyntheticDgpSpec):
    """Population covariance, coefficients and one fixed design draw.

    The drawn design is centered, and the outcome model is taken conditional
    on that centered design. Returns (truth, problem) where the problem holds
    one noise draw.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    eig = eigenvalue_grid(spec.eta_min, spec.eta_max, spec.curvature_c, spec.d)
    u = random_rotation(spec.d, rng)
    pop = (u * eig) @ u.T
    beta0 = np.abs(rng.standard_normal(spec.d))
    beta0 /= np.linalg.norm(beta0)
    phi = rng.standard_normal((spec.n, spec.d)) * np.sqrt(eig) @ u.T
    phi -= phi.mean(axis=0)
    mu = target_vector(spec)
    truth = DgpTruth(beta0, pop, phi.T @ phi / spec.n, spec.noise_var, mu, spec.n, phi)
    y = phi @ beta0 + np.sqrt(spec.noise_var) * rng.standard_normal(spec.n)
    return truth, ProblemData(phi, y, mu)


def synthetic_suite(full=False, seed=0, n=2000, d=50):
    """Synthetic suite: 3 spectra x 2 noise levels x targets.

    ``full`` uses five targets (constant 0.1, constant 2, three random unit
    vectors); otherwise one random unit target per spectrum and noise level.
    """
    targets = [("random_unit", 0.0, 0)]
    if full:
        targets = [("constant", 0.1, 0), ("constant", 2.0, 0)] + [("random_unit", 0.0, k) for k in range(3)]
    specs = []
    for setting, (lo, hi, c) in SETTINGS.items():
        for noise in NOISE_LEVELS:
            for kind, value, tseed in targets:
                label = f"s{setting}_noise{noise:g}_{kind}{value:g}" if kind == "constant" else \
                    f"s{setting}_noise{noise:g}_unit{tseed}"
                specs.append(SyntheticDgpSpec(lo, hi, c, noise, kind, value, tseed, n, d,
                                              seed=seed * 1000 + setting, name=label))
    return specs


def generate_semisynthetic(data: ProblemData, perturbation="none", frac=0.0, seed=0, folds=5):
    """Truth fitted to a real problem, with a freshly drawn Gaussian design.

    ``even_up`` / ``even_down`` shift the 2nd, 4th, ... target coordinates by
    frac * ||target||.
    """
    lam = cv_outcome(data, "ridge", folds=folds, seed=seed).chosen
    beta0 = fit_ridge(data, lam * data.n).beta
    resid = data.y_p - data.y_p.mean() - data.phi_p @ beta0
    noise_var = float(np.mean(resid**2))
    pop = data.phi_p.T @ data.phi_p / data.n
    eig = eigh_symmetric(pop)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    phi = (rng.standard_normal((data.n, data.d)) * np.sqrt(eig.eigenvalues)) @ eig.eigenvectors.T
    phi -= phi.mean(axis=0)
    mu = data.phi_q_mean.copy()
    if perturbation != "none":
        sign = {"even_up": 1.0, "even_down": -1.0}[perturbation]
        mu[1::2] += sign * frac * np.linalg.norm(data.phi_q_mean)
    return DgpTruth(beta0, pop, phi.T @ phi / data.n, noise_var, mu, data.n, phi)


# ---------------------------------------------------------------- study

@dataclass
class DgpResult:
    name: str
    lambda_star: float
    delta_star: float
    oracle_mse: float
    oracle_mse_analytic: float
    scheme_mse: dict
    prop_zero: dict
    relative: dict = field(default_factory=dict)


@dataclass
class SimulationSummary:
    per_dgp: list
    aggregates: dict
    replicates: int
    seed: int

    def rows(self):
        out = []
        for r in self.per_dgp:
            for s in r.scheme_mse:
                out.append({"dgp": r.name, "scheme": s, "mse": r.scheme_mse[s], "relative_mse": r.relative[s],
                            "prop_delta_zero": r.prop_zero[s], "oracle_mse": r.oracle_mse,
                            "lambda_star": r.lambda_star, "delta_star": r.delta_star})
        return out


class _DoubleRidge:
    """Two-term double-ridge estimate for a fixed design, per-sample penalties."""

    def __init__(self, truth: DgpTruth):
        self.phi = truth.design
        self.n = truth.n
        self.mu = truth.target_mean
        self.eig = truth.eig

    def estimate(self, y, lam, delta):
        s, v = self.eig.eigenvalues, self.eig.eigenvectors
        xty = v.T @ (self.phi.T @ y) / self.n

        def inv(shift):
            den = s + shift
            return np.where(den > 0, 1.0 / np.where(den > 0, den, 1.0), 0.0)

        beta = v @ (inv(lam) * xty)
        theta = v @ (inv(delta) * (v.T @ self.mu))
        w = self.phi @ theta
        return float(self.mu @ beta + w @ (y - self.phi @ beta) / self.n)


def _replicate(truth, dgp_index, rep, seed, folds, schemes, oracle, model):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(dgp_index, rep)))
    y = truth.design @ truth.beta0 + np.sqrt(truth.noise_var) * rng.standard_normal(truth.n)
    fold_seed = int(rng.integers(2**63 - 1))
    data = ProblemData(truth.design, y, truth.target_mean)
    plan = FoldPlan(truth.design, folds, fold_seed)
    outcome = cv_outcome(data, "ridge", plan=plan)
    lam = outcome.chosen
    psi = truth.psi
    errors, zeros = {}, {}
    for scheme in schemes:
        if scheme == "cv_outcome":
            delta, zero = lam, outcome.selected_zero
        elif scheme == "cv_imbalance":
            res = cv_imbalance(data, plan=plan)
            delta, zero = res.chosen, res.selected_zero
        elif scheme == "cv_riesz":
            res = cv_riesz(data, plan=plan)
            delta, zero = res.chosen, res.selected_zero
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        errors[scheme] = (model.estimate(y, lam, delta) - psi) ** 2
        zeros[scheme] = zero
    errors["oracle"] = (model.estimate(y, *oracle) - psi) ** 2
    return errors, zeros


def thread_count():
    try:
        return max(1, int(os.environ.get("BALWT_THREADS", "1")))
    except ValueError:
        return 1


def run_study(dgps, schemes=SCHEMES, replicates=200, seed=0, folds=5, threads=None) -> SimulationSummary:
    """Monte Carlo comparison of CV schemes against the MSE oracle.

    ``dgps`` is a list of (name, DgpTruth) pairs whose truths carry a design.
    Each replicate draws fresh noise and fold seeds from a stream keyed by
    (dgp index, replicate), so results do not depend on the thread count.
    """
    threads = threads or thread_count()
    results = []
    for k, (name, truth) in enumerate(dgps):
        orc = oracle_hyperparams(truth)
        model = _DoubleRidge(truth)
        oracle = (orc.lambda_star, orc.delta_star)
        job = lambda r: _replicate(truth, k, r, seed, folds, schemes, oracle, model)
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                reps = list(pool.map(job, range(replicates)))
        else:
            reps = [job(r) for r in range(replicates)]
        mse = {s: float(np.mean([e[s] for e, _ in reps])) for s in schemes}
        oracle_mse = float(np.mean([e["oracle"] for e, _ in reps]))
        prop = {s: float(np.mean([z[s] for _, z in reps])) for s in schemes}
        res = DgpResult(name, orc.lambda_star, orc.delta_star, oracle_mse,
                        augmented_mse(truth, *oracle).total, mse, prop)
        res.relative = {s: mse[s] / oracle_mse if oracle_mse > 0 else np.inf for s in schemes}
        results.append(res)
    return SimulationSummary(results, _aggregate(results, schemes), replicates, seed)


def _aggregate(results, schemes):
    agg = {}
    for s in schemes:
        rel = np.array([r.relative[s] for r in results])
        best = sum(min(r.scheme_mse, key=r.scheme_mse.get) == s for r in results)
        worst = sum(max(r.scheme_mse, key=r.scheme_mse.get) == s for r in results)
        agg[s] = {"best_count": int(best), "worst_count": int(worst),
                  "median_relative_mse": float(np.median(rel)), "best_relative_mse": float(rel.min()),
                  "worst_relative_mse": float(rel.max()),
                  "prop_delta_zero": float(np.mean([r.prop_zero[s] for r in results]))}
    return agg


def write_summary_csv(summary: SimulationSummary, path, digits=12):
    from .io import atomic_write_csv
    per = summary.rows()
    agg = [{"scheme": s, **v} for s, v in summary.aggregates.items()]
    atomic_write_csv(path, per, digits)
    root, ext = os.path.splitext(path)
    atomic_write_csv(f"{root}_aggregate{ext or '.csv'}", agg, digits)
