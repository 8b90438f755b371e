"""Acceptance criteria 1-11, each at its stated tolerance and instance count.

Every test records one PASS/FAIL line; the lines are printed as each test
finishes and again in the pytest terminal summary. Run on its own with
``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""
import csv
import time

import numpy as np
import pytest

from balwt import augmentation as aug
from balwt import balancing as bal
from balwt.cli import build_parser, load_problem, main
from balwt.dataset import ProblemData
from balwt.instances import diagonal_problem, random_problem
from balwt.numerics import relative_error
from balwt.oracle_mse import augmented_mse, oracle_hyperparams, rate_diagnostic
from balwt.outcome_models import KernelSpec, fit_lasso, fit_ols, fit_ridge
from balwt.simulation import synthetic_suite, generate_synthetic, run_study, SyntheticDgpSpec

RESULTS = []


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return passed


def sizes(rng):
    return int(rng.integers(20, 101)), int(rng.integers(2, 16))


def test_01_core_equivalence():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for k in range(600):
        if k < 500:
            n, d = sizes(rng)
        else:
            n = int(rng.integers(10, 40))
            d = int(rng.integers(n + 1, n + 40))
        data = random_problem(rng, n, d)
        w = data.phi_p @ rng.standard_normal(d)
        lhs = w @ data.y_p / n
        rhs = (data.phi_p.T @ w / n) @ fit_ols(data).beta
        worst = max(worst, abs(lhs - rhs) / (1 + abs(lhs)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 10
    assert record(1, "weighting equals OLS on reweighted features", ok,
                  f"max rel err {worst:.2e} (tol 1e-8) over 600 instances, {elapsed:.2f}s (limit 10s)")


def test_02_collapse_identities():
    rng = np.random.default_rng(202)
    worst_exact = worst_ols = 0.0
    for _ in range(200):
        data = random_problem(rng, *sizes(rng))
        ols_psi = data.phi_q_mean @ fit_ols(data).beta
        fit = aug.augment(fit_ridge(data, rng.uniform(0.1, 10) * data.n), bal.solve_exact(data), data)
        worst_exact = max(worst_exact, relative_error(ols_psi, fit.psi_hat))
        w = bal.solve_l2(data, rng.uniform(0.01, 10) * data.n)
        worst_ols = max(worst_ols, relative_error(ols_psi, aug.augment(fit_ols(data), w, data).psi_hat))
    ok = max(worst_exact, worst_ols) <= 1e-9
    assert record(2, "collapse to the OLS plug-in", ok,
                  f"exact balance {worst_exact:.2e}, OLS base {worst_ols:.2e} (tol 1e-9, 200 instances each)")


def test_03_double_ridge():
    rng = np.random.default_rng(303)
    diag = corr = kern = 0.0
    for _ in range(200):
        data = diagonal_problem(rng, int(rng.integers(20, 101)), int(rng.integers(2, 16)))
        lam = rng.uniform(0, 5, data.d) * data.n
        diag = max(diag, aug.verify_double_ridge(data, lam, rng.uniform(0.01, 5) * data.n))
        data = random_problem(rng, *sizes(rng))
        corr = max(corr, aug.verify_double_ridge(data, rng.uniform(0.01, 5) * data.n, rng.uniform(0.01, 5) * data.n))
        lam, delta = rng.uniform(0.01, 5) * data.n, rng.uniform(0.01, 5) * data.n
        two_term, single = aug.kernel_double_ridge(data, KernelSpec("linear"), lam, delta)
        primal = aug.augment(fit_ridge(data, lam), bal.solve_l2(data, delta), data).psi_hat
        kern = max(kern, relative_error(two_term, single), relative_error(primal, single))
    ok = diag <= 1e-9 and corr <= 1e-9 and kern <= 1e-8
    assert record(3, "double ridge equals one undersmoothed ridge", ok,
                  f"diagonal {diag:.2e}, correlated {corr:.2e} (tol 1e-9); linear kernel {kern:.2e} (tol 1e-8)")


def test_04_linf_closed_form():
    rng = np.random.default_rng(404)
    closed_err = kkt = 0.0
    for _ in range(100):
        data = diagonal_problem(rng, int(rng.integers(20, 101)), int(rng.integers(2, 16)))
        delta = rng.uniform(0, 1.2) * np.max(np.abs(data.phi_q_mean))
        closed = bal.solve_linf_diagonal(data, delta).phi_q_hat
        general = bal.solve_linf_general(data, delta).phi_q_hat
        closed_err = max(closed_err, float(np.max(np.abs(closed - general))))
        data = random_problem(rng, *sizes(rng))
        delta = rng.uniform(0.05, 1.0) * np.max(np.abs(data.phi_q_mean))
        kkt = max(kkt, bal.linf_kkt_residual(bal.solve_linf_general(data, delta), data))
    ok = closed_err <= 1e-6 and kkt <= 1e-6
    assert record(4, "l_inf balancing by soft thresholding", ok,
                  f"closed form vs general {closed_err:.2e}, KKT on correlated {kkt:.2e} (tol 1e-6, 100 each)")


def test_05_double_selection():
    rng = np.random.default_rng(505)
    mismatches = dense = 0
    for _ in range(200):
        data = diagonal_problem(rng, int(rng.integers(30, 101)), int(rng.integers(4, 16)))
        dense += bool(np.all(fit_ols(data).beta != 0))
        xty = np.abs(data.phi_p.T @ data.y_p)
        lasso = fit_lasso(data, rng.uniform(0.1, 0.9) * xty.max())
        weights = bal.solve_linf_diagonal(data, rng.uniform(0.1, 0.9) * np.max(np.abs(data.phi_q_mean)))
        union = set(np.flatnonzero(lasso.beta)) | set(np.flatnonzero(weights.phi_q_hat))
        mismatches += set(aug.double_selection_support(lasso, weights, data)) != union
    ok = mismatches == 0 and dense == 200
    assert record(5, "augmented support is the union of supports", ok,
                  f"{mismatches} mismatches over 200 instances ({dense} with dense OLS)")


def estimator_row(truth, lam, delta):
    """Row h with psi_hat = h'Y, read off the fitting pipeline on unit outcomes."""
    n = truth.n
    h = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        data = ProblemData(truth.design, e, truth.target_mean)
        h[i] = aug.augment(fit_ridge(data, n * lam), bal.solve_l2(data, n * delta), data).psi_hat
    return h


MC_PAIRS = [(0.0, 0.0), (1.0, 0.0), (0.01, 0.01), (0.1, 1.0), (1.0, 1e4)]


def test_06_finite_sample_mse():
    start = time.perf_counter()
    truth = generate_synthetic(SyntheticDgpSpec(1e-4, 3.0, 3.0, 1.0, n=100, d=5, seed=0))[0]
    rng = np.random.default_rng(0)
    noise = np.sqrt(truth.noise_var) * rng.standard_normal((20_000, truth.n))
    signal = truth.design @ truth.beta0
    errs = []
    for lam, delta in MC_PAIRS:
        h = estimator_row(truth, lam, delta)
        mc = float(np.mean((h @ signal + noise @ h - truth.psi) ** 2))
        analytic = augmented_mse(truth, lam, delta).total
        errs.append(abs(mc - analytic) / analytic)
    elapsed = time.perf_counter() - start
    ok = max(errs) <= 0.02 and elapsed < 120
    detail = ", ".join(f"({l:g},{d:g}): {e:.2%}" for (l, d), e in zip(MC_PAIRS, errs))
    assert record(6, "analytic MSE vs Monte Carlo", ok,
                  f"rel diff {detail} (tol 2%, 20000 draws, n=100, d=5), {elapsed:.1f}s (limit 120s)")


def test_07_rate():
    ns = np.unique(np.logspace(1, 8, 60).astype(int))
    slope = rate_diagnostic(1.0, [(n, n**-0.5) for n in ns])
    ok = abs(slope - 2.0) <= 0.05
    assert record(7, "gamma_n scales as lambda_n squared", ok, f"slope {slope:.4f} (target 2 +/- 0.05)")


def test_08_norm_ordering():
    rng = np.random.default_rng(808)
    worst = -np.inf
    for _ in range(200):
        data = random_problem(rng, *sizes(rng))
        ridge = fit_ridge(data, rng.uniform(0.01, 10) * data.n)
        fit = aug.augment(ridge, bal.solve_l2(data, rng.uniform(0.01, 10) * data.n), data)
        a, b, c = (np.linalg.norm(x) for x in (ridge.beta, fit.beta_aug_rotated, fit.beta_ols))
        worst = max(worst, a - b, b - c)
    ok = worst <= 1e-9
    assert record(8, "ridge <= augmented <= OLS coefficient norms", ok,
                  f"largest ordering violation {worst:.2e} (slack 1e-9, 200 instances)")


def test_09_nonlinear_decomposition():
    rng = np.random.default_rng(909)
    identity = zero_err = trim = 0.0
    for k in range(200):
        data = random_problem(rng, *sizes(rng))
        w = np.exp(0.3 * data.phi_p @ rng.standard_normal(data.d) / np.sqrt(data.d))
        _, dec = bal.evaluate_external_weights(w / w.mean(), data)
        identity = max(identity, relative_error(dec.weighted_mean, dec.reconstruction))
        _, lin = bal.evaluate_external_weights(1 + data.phi_p @ rng.standard_normal(data.d), data)
        n = int(rng.integers(10, 40))
        wide = random_problem(rng, n, n + int(rng.integers(1, 30)))
        _, dw = bal.evaluate_external_weights(np.exp(rng.standard_normal(n)), wide)
        zero_err = max(zero_err, abs(lin.approx_error) / (1 + abs(lin.weighted_mean)),
                       abs(dw.approx_error) / (1 + abs(dw.weighted_mean)))
        if k < 50:
            simplex = random_problem(rng, int(rng.integers(30, 80)), int(rng.integers(2, 5)), shift_scale=2.0)
            fit = bal.solve_simplex_l2(simplex, rng.uniform(0.5, 5.0))
            trim = max(trim, relative_error(*bal.trimmed_ols_identity(fit, simplex)))
    ok = identity <= 1e-10 and zero_err <= 1e-10 and trim <= 1e-7
    assert record(9, "nonlinear weights decomposition", ok,
                  f"identity {identity:.2e} (tol 1e-10), error term for linear w / d>n {zero_err:.2e} (tol 1e-10), "
                  f"trimming {trim:.2e} (tol 1e-7)")


@pytest.fixture(scope="module")
def study():
    start = time.perf_counter()
    dgps = [(s.name, generate_synthetic(s)[0]) for s in synthetic_suite(seed=0)]
    summary = run_study(dgps, replicates=200, seed=0)
    return summary, dgps, time.perf_counter() - start


def test_10_tuning_study(study):
    summary, dgps, elapsed = study
    agg = summary.aggregates
    zero = {s: agg[s]["prop_delta_zero"] for s in agg}
    median = {s: agg[s]["median_relative_mse"] for s in agg}
    oracle_positive = all(oracle_hyperparams(t).delta_star > 0 for _, t in dgps)
    a = zero["cv_riesz"] >= 0.25 and zero["cv_outcome"] == 0 and zero["cv_imbalance"] == 0
    b = median["cv_imbalance"] < median["cv_riesz"] and median["cv_outcome"] < median["cv_riesz"]
    ok = a and b and oracle_positive and elapsed < 1800
    detail = (f"prop delta=0 riesz {zero['cv_riesz']:.3f} / outcome {zero['cv_outcome']:.3f} / "
              f"imbalance {zero['cv_imbalance']:.3f}; median rel MSE imbalance {median['cv_imbalance']:.3g}, "
              f"outcome {median['cv_outcome']:.3g}, riesz {median['cv_riesz']:.3g}; "
              f"oracle delta*>0 on all DGPs: {oracle_positive}; {elapsed:.0f}s (limit 1800s)")
    assert record(10, "tuning study, 6 DGPs x 200 replicates", ok, detail)


def _regpath(tmp_path, extra):
    out = tmp_path / "_".join(extra).replace("-", "")
    argv = ["regpath", "--n", "80", "--d", "6", "--seed", "3", "--digits", "17", "--out", str(out)] + extra
    assert main(argv) == 0
    parser, _ = build_parser()
    data = load_problem(parser.parse_args(argv))
    table = {}
    with open(out / "regpath.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            table.setdefault(r["series"], {}).setdefault(float(r["hyperparameter"]), {})[int(r["coordinate"])] = \
                float(r["value"])
    paths = {s: (np.array(sorted(v)), np.array([[v[h][j] for j in range(data.d)] for h in sorted(v)]))
             for s, v in table.items()}
    return data, paths


def test_11_regpath(tmp_path):
    start_err = end_err = 0.0
    for extra in (["--synthetic", "diag", "--norm", "l2"], ["--synthetic", "corr", "--norm", "l2"],
                  ["--synthetic", "diag", "--norm", "linf"], ["--synthetic", "corr", "--norm", "linf"]):
        data, paths = _regpath(tmp_path, extra)
        hs, coefs = paths["augmented_coef"]
        beta_ols, beta_reg = fit_ols(data).beta, fit_ridge(data, 5.0).beta
        start_err = max(start_err, relative_error(beta_ols, coefs[0]) if hs[0] == 0 else np.inf)
        end_err = max(end_err, float(np.max(np.abs(coefs[-1] - beta_reg))))
    # kinks of the l_inf path on a diagonal design
    data, paths = _regpath(tmp_path, ["--synthetic", "diag", "--norm", "linf"])
    hs, coefs = paths["augmented_coef"]
    _, feats = paths["reweighted_feature"]
    kinks = np.abs(data.phi_q_mean)
    knots = np.unique(np.concatenate([[0.0], kinks, [hs[-1]]]))
    lin_resid = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        i_lo, i_hi = np.searchsorted(hs, lo), np.searchsorted(hs, hi)
        inside = slice(i_lo, i_hi + 1)
        frac = ((hs[inside] - hs[i_lo]) / (hs[i_hi] - hs[i_lo]))[:, None]
        for vals in (coefs, feats):
            interp = vals[i_lo] + frac * (vals[i_hi] - vals[i_lo])
            lin_resid = max(lin_resid, float(np.max(np.abs(vals[inside] - interp))))
    slope_change = []
    for j, k in enumerate(kinks):
        i = np.searchsorted(hs, k)
        left = (feats[i, j] - feats[i - 1, j]) / (hs[i] - hs[i - 1])
        right = (feats[i + 1, j] - feats[i, j]) / (hs[i + 1] - hs[i])
        slope_change.append(abs(left - right))
    kinked = min(slope_change) > 0.5
    ok = start_err <= 1e-8 and end_err <= 1e-4 and lin_resid <= 1e-9 and kinked
    assert record(11, "regularization path endpoints and kinks", ok,
                  f"delta=0 vs OLS {start_err:.2e} (tol 1e-8), largest delta vs base {end_err:.2e} (tol 1e-4), "
                  f"piecewise-linear residual {lin_resid:.2e} (tol 1e-9), slope breaks at every |shift_j|: {kinked}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
