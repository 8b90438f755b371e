"""Command-line interface.

Exit status: 0 on success, 1 on a computational failure, 2 on a usage error.
"""
import argparse
import json
import os
import platform
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import augmentation as aug
from . import balancing as bal
from .dataset import ExpansionKind, FeatureExpansion, ProblemData, build_problem, ingest_csv
from .errors import BalwtError, InvalidHyperparameter, SchemaError
from .instances import diagonal_problem, random_problem
from .io import atomic_write_csv, atomic_write_json, read_config, write_manifest
from .oracle_mse import DgpTruth, augmented_mse, oracle_hyperparams, ridge_prediction_mse
from .outcome_models import fit_lasso, fit_ols, fit_ridge
from .simulation import SETTINGS, SyntheticDgpSpec, synthetic_suite, generate_synthetic, run_study, write_summary_csv
from .tuning import cv_imbalance, cv_outcome, cv_riesz, delta_equals_lambda
from .verify import CHECKS, run_suite

USAGE_ERRORS = (InvalidHyperparameter, SchemaError, FileNotFoundError)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    out: str
    seed: int
    digits: int
    params: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args):
        params = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
        return cls(args.command, args.out, args.seed, args.digits, params)


# ---------------------------------------------------------------- helpers

def _columns(text):
    return [c.strip() for c in text.split(",") if c.strip()] if text else []


def _expansion(args, names):
    kind = {"identity": ExpansionKind.identity, "squares": ExpansionKind.squares_of_listed_columns,
            "interactions": ExpansionKind.pairwise_interactions_plus_quadratics}[args.expansion]

    def index(cols):
        out = []
        for c in _columns(cols):
            if c not in names:
                raise SchemaError(f"expansion column {c!r} is not a covariate")
            out.append(names.index(c))
        return out

    return FeatureExpansion(kind, index(args.continuous), index(args.discrete))


def load_problem(args) -> ProblemData:
    if args.data:
        if not args.treatment or not args.outcome:
            raise UsageError("--data needs --treatment and --outcome")
        raw = ingest_csv(args.data, args.treatment, args.outcome, _columns(args.covariates) or None)
        return build_problem(raw, _expansion(args, raw.column_names))
    if args.synthetic:
        rng = np.random.default_rng(args.seed)
        if args.synthetic == "diag":
            return diagonal_problem(rng, args.n, args.d)
        if args.synthetic == "corr":
            return random_problem(rng, args.n, args.d)
        lo, hi, c = SETTINGS[int(args.synthetic)]
        _, data = generate_synthetic(SyntheticDgpSpec(lo, hi, c, args.noise_var, n=args.n, d=args.d, seed=args.seed))
        return data
    raise UsageError("give --data CSV or --synthetic {1,2,3,diag,corr}")


def _outcome(family, data, lam):
    if family == "ols":
        return fit_ols(data)
    if family == "ridge":
        return fit_ridge(data, lam)
    if family == "lasso":
        return fit_lasso(data, lam)
    raise UsageError(f"unknown family {family!r}")


def _weights(norm, data, delta):
    if norm == "exact" or (norm == "l2" and delta == 0):
        return bal.solve_exact(data)
    if norm == "l2":
        return bal.solve_l2(data, delta)
    if norm == "linf":
        try:
            return bal.solve_linf_diagonal(data, delta)
        except bal.NotDiagonalError:
            return bal.solve_linf_general(data, delta)
    if norm == "simplex":
        return bal.solve_simplex_l2(data, delta)
    raise UsageError(f"unknown weight family {norm!r}")


def _manifest(cfg: RunConfig, outputs):
    entries = {"command": cfg.command, "seed": cfg.seed, "digits": cfg.digits, "version": __version__,
               "numpy": np.__version__, "python": platform.python_version(), "outputs": outputs,
               "threads": os.environ.get("BALWT_THREADS", "1")}
    for k, v in cfg.params.items():
        entries[f"param.{k}"] = "" if v is None else v
    write_manifest(os.path.join(cfg.out, "manifest.txt"), entries)


def _out(cfg, name):
    return os.path.join(cfg.out, name)


# ---------------------------------------------------------------- commands

def cmd_ingest(args, cfg):
    if not args.data:
        raise UsageError("ingest needs --data")
    raw = ingest_csv(args.data, args.treatment, args.outcome, _columns(args.covariates) or None)
    summary = {"rows_read": raw.rows_read, "rows_rejected": raw.rows_rejected, "covariates": raw.column_names,
               "k": len(raw.column_names), "control": raw.n_control, "treated": raw.n_treated}
    atomic_write_json(_out(cfg, "ingest.json"), summary)
    _manifest(cfg, ["ingest.json"])
    print(f"rows kept {raw.rows_read - raw.rows_rejected}, rejected {raw.rows_rejected}; "
          f"k={len(raw.column_names)}, control={raw.n_control}, treated={raw.n_treated}")
    return 0


def cmd_fit(args, cfg):
    data = load_problem(args)
    outcome = _outcome(args.family, data, args.lam)
    ols = fit_ols(data)
    payload = {"n": data.n, "d": data.d, "family": args.family, "lambda": args.lam, "beta": outcome.beta,
               "phi_q_mean": data.phi_q_mean, "feature_names": data.feature_names,
               "ols_plug_in": float(data.phi_q_mean @ ols.beta), "plug_in": outcome.plug_in(data)}
    if args.augment != "none":
        delta, tuned = args.delta, None
        if args.tune_delta:
            tuned = _tune(args.tune_delta, data, args)
            delta = tuned.unscaled(data.n)
            payload["tuning"] = {"scheme": tuned.scheme, "chosen_per_sample": tuned.chosen,
                                 "selected_zero": tuned.selected_zero}
        weights = _weights(args.augment, data, delta)
        fit = aug.augment(outcome, weights, data)
        exact = weights.norm_family is bal.NormFamily.exact
        payload.update({
            "augment": args.augment, "delta": delta, "psi_hat": fit.psi_hat,
            "counterfactual_mean": float(data.y_p.mean() + fit.psi_hat),
            "beta_aug": fit.beta_aug, "beta_aug_rotated": fit.beta_aug_rotated, "a_path": fit.a_path,
            "phi_q_hat": weights.phi_q_hat, "imbalance": weights.imbalance, "theta": weights.theta,
            "components": fit.components,
            "collapse_to_ols": bool((exact and weights.imbalance <= 1e-8 * (1 + np.linalg.norm(data.phi_q_mean)))
                                    or args.family == "ols"),
        })
        print(f"psi_hat = {fit.psi_hat:.12g} (OLS plug-in {payload['ols_plug_in']:.12g})")
    else:
        print(f"plug_in = {payload['plug_in']:.12g}")
    atomic_write_json(_out(cfg, "fit.json"), payload)
    _manifest(cfg, ["fit.json"])
    return 0


def _tune(scheme, data, args):
    if scheme == "cv_imbalance":
        return cv_imbalance(data, folds=args.folds, seed=args.seed)
    if scheme == "cv_riesz":
        return cv_riesz(data, folds=args.folds, seed=args.seed)
    if scheme in ("cv_outcome", "outcome_equals_delta"):
        res = cv_outcome(data, "ridge", folds=args.folds, seed=args.seed)
        return delta_equals_lambda(res) if scheme == "outcome_equals_delta" else res
    raise UsageError(f"unknown scheme {scheme!r}")


def regpath_rows(data, family, lam, norm, grid):
    """Rows (hyperparameter, coordinate, value, series) for the three path panels."""
    base = _outcome(family, data, lam)
    diagonal = aug._is_diagonal(data.gram)
    rows = []
    for h in grid:
        outcome = fit_ols(data) if h == 0 else _outcome(family if family != "ols" else "ridge", data, h)
        if norm == "linf" and diagonal:
            weights = bal.solve_linf_diagonal(data, h)
            coefs = aug.linf_beta_aug(base, data, h)
        else:
            weights = _weights(norm, data, h)
            fit = aug.augment(base, weights, data)
            coefs = fit.beta_aug_rotated if norm == "l2" else fit.beta_aug
        for series, values in (("outcome_coef", outcome.beta), ("reweighted_feature", weights.phi_q_hat),
                               ("augmented_coef", coefs)):
            for j, v in enumerate(values):
                rows.append({"hyperparameter": float(h), "coordinate": j, "value": float(v), "series": series})
    return rows, base


def default_grid(data, norm, num):
    if norm == "linf":
        shift = np.abs(data.phi_q_mean)
        grid = np.linspace(0.0, 1.25 * shift.max(), num)
        return np.unique(np.concatenate([grid, shift]))
    top = float(np.max(np.linalg.svd(data.phi_p, compute_uv=False)) ** 2)
    return np.concatenate([[0.0], np.logspace(-4, 10, num - 1) * top])


def cmd_regpath(args, cfg):
    data = load_problem(args)
    grid = np.array([float(x) for x in _columns(args.deltas)]) if args.deltas else \
        default_grid(data, args.norm, args.num)
    if np.any(grid < 0):
        raise InvalidHyperparameter("grid values must be nonnegative")
    rows, base = regpath_rows(data, args.family, args.lam, args.norm, np.sort(grid))
    atomic_write_csv(_out(cfg, "regpath.csv"), rows, cfg.digits,
                     columns=["hyperparameter", "coordinate", "value", "series"])
    _manifest(cfg, ["regpath.csv"])
    print(f"{len(rows)} rows, {grid.size} grid values, base {args.family} lambda={args.lam:g}")
    return 0


def cmd_verify(args, cfg):
    if args.perturb and args.perturb not in CHECKS:
        raise UsageError(f"--perturb must be one of: {', '.join(CHECKS)}")
    reports = run_suite(args.instances, args.seed, args.perturb)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:32s} max violation {r.max_violation:.3e}  "
              f"(tol {r.tolerance:.0e}, {r.instances} instances)")
    rows = [{"identity": r.name, "max_violation": r.max_violation, "tolerance": r.tolerance,
             "instances": r.instances, "passed": r.passed} for r in reports]
    atomic_write_csv(_out(cfg, "verify.csv"), rows, cfg.digits)
    _manifest(cfg, ["verify.csv"])
    if failed:
        print("failing identities: " + ", ".join(r.name for r in failed))
        return 1
    return 0


def _truth_from_args(args):
    if args.truth:
        with open(args.truth, encoding="utf-8") as fh:
            raw = json.load(fh)
        return DgpTruth(np.array(raw["beta0"], float), np.array(raw["pop_cov"], float),
                        np.array(raw["sample_cov"], float), float(raw["noise_var"]),
                        np.array(raw["target_mean"], float), int(raw["n"]))
    lo, hi, c = SETTINGS[int(args.setting)]
    spec = SyntheticDgpSpec(lo, hi, c, args.noise_var, args.target, args.target_value, args.target_seed,
                            args.n, args.d, args.seed)
    return generate_synthetic(spec)[0]


def cmd_oracle(args, cfg):
    truth = _truth_from_args(args)
    res = oracle_hyperparams(truth)
    best = augmented_mse(truth, res.lambda_star, res.delta_star)
    payload = {"lambda_star": res.lambda_star, "delta_star": res.delta_star, "delta_at_zero": res.delta_at_zero,
               "bias_sq": best.bias_sq, "variance": best.variance, "total": best.total,
               "ridge_prediction_mse": ridge_prediction_mse(truth, res.lambda_star).total}
    rows = [{"curve": "lambda", "value": x, "criterion": v} for x, v in res.lambda_curve]
    rows += [{"curve": "delta", "value": x, "criterion": v} for x, v in res.delta_curve]
    atomic_write_json(_out(cfg, "oracle.json"), payload)
    atomic_write_csv(_out(cfg, "oracle_curves.csv"), rows, cfg.digits)
    _manifest(cfg, ["oracle.json", "oracle_curves.csv"])
    flag = " (boundary: delta* = 0)" if res.delta_at_zero else ""
    print(f"lambda* = {res.lambda_star:.6g}, delta* = {res.delta_star:.6g}{flag}")
    return 0


def cmd_tune(args, cfg):
    data = load_problem(args)
    res = _tune(args.scheme, data, args)
    atomic_write_json(_out(cfg, "tune.json"), {"scheme": res.scheme, "chosen": res.chosen,
                                               "chosen_unscaled": res.unscaled(data.n),
                                               "selected_zero": res.selected_zero, "scale": res.scale,
                                               "folds": args.folds, "seed": args.seed})
    rows = [{"value": x, "criterion": v, **{f"fold{k}": f for k, f in enumerate(per)}} for x, v, per in res.curve]
    atomic_write_csv(_out(cfg, "tune_curve.csv"), rows, cfg.digits)
    _manifest(cfg, ["tune.json", "tune_curve.csv"])
    print(f"{res.scheme.value}: chosen {res.chosen:.6g} (per-sample), selected_zero={res.selected_zero}")
    return 0


def cmd_simulate(args, cfg):
    if args.replicates < 1:
        raise UsageError("--replicates must be at least 1")
    specs = synthetic_suite(full=args.suite == "full", seed=args.seed, n=args.n, d=args.d)
    dgps = [(s.name, generate_synthetic(s)[0]) for s in specs]
    summary = run_study(dgps, replicates=args.replicates, seed=args.seed, folds=args.folds)
    write_summary_csv(summary, _out(cfg, "summary.csv"), cfg.digits)
    _manifest(cfg, ["summary.csv", "summary_aggregate.csv"])
    for scheme, agg in summary.aggregates.items():
        print(f"{scheme:14s} median rel. MSE {agg['median_relative_mse']:.4g}  "
              f"prop delta=0 {agg['prop_delta_zero']:.3f}  best {agg['best_count']}  worst {agg['worst_count']}")
    return 0


# ---------------------------------------------------------------- parser

def _data_flags(p):
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--treatment", default="treatment")
    p.add_argument("--outcome", default="outcome")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--expansion", choices=["identity", "squares", "interactions"], default="identity")
    p.add_argument("--continuous", help="comma-separated continuous columns for the expansion")
    p.add_argument("--discrete", help="comma-separated discrete columns for the expansion")
    p.add_argument("--synthetic", choices=["1", "2", "3", "diag", "corr"])
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--noise-var", type=float, default=1.0)


def build_parser():
    parser = argparse.ArgumentParser(prog="balwt", description="Augmented balancing weights toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--digits", type=int, default=12, help="significant digits in CSV output")
        p.set_defaults(func=func)
        return p

    p = command("ingest", cmd_ingest, "read a CSV and report row counts")
    _data_flags(p)

    p = command("fit", cmd_fit, "fit an outcome model and optional augmentation")
    _data_flags(p)
    p.add_argument("--family", choices=["ols", "ridge", "lasso"], default="ridge")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="outcome penalty (unscaled)")
    p.add_argument("--augment", choices=["none", "l2", "linf", "exact", "simplex"], default="none")
    p.add_argument("--delta", type=float, default=0.0, help="weight penalty (unscaled)")
    p.add_argument("--tune-delta", choices=["cv_imbalance", "cv_riesz", "outcome_equals_delta"])
    p.add_argument("--folds", type=int, default=5)

    p = command("regpath", cmd_regpath, "export regularization paths as CSV")
    _data_flags(p)
    p.add_argument("--family", choices=["ols", "ridge", "lasso"], default="ridge")
    p.add_argument("--lambda", dest="lam", type=float, default=5.0)
    p.add_argument("--norm", choices=["l2", "linf"], default="l2")
    p.add_argument("--deltas", help="comma-separated grid (default: automatic)")
    p.add_argument("--num", type=int, default=60)

    p = command("verify", cmd_verify, "check the estimator identities on random instances")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--perturb", help="identity to perturb (negative control)")

    p = command("oracle", cmd_oracle, "MSE-optimal hyperparameters for a synthetic truth")
    p.add_argument("--truth", help="JSON with beta0, pop_cov, sample_cov, noise_var, target_mean, n")
    p.add_argument("--setting", choices=["1", "2", "3"], default="1")
    p.add_argument("--noise-var", type=float, default=0.1)
    p.add_argument("--target", choices=["random_unit", "constant"], default="random_unit")
    p.add_argument("--target-value", type=float, default=0.1)
    p.add_argument("--target-seed", type=int, default=0)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=50)

    p = command("tune", cmd_tune, "cross-validate a hyperparameter")
    _data_flags(p)
    p.add_argument("--scheme", choices=["cv_outcome", "cv_imbalance", "cv_riesz", "outcome_equals_delta"],
                   default="cv_imbalance")
    p.add_argument("--folds", type=int, default=5)

    p = command("simulate", cmd_simulate, "run the synthetic tuning study")
    p.add_argument("--suite", choices=["settings", "full"], default="settings")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=50)
    return parser, sub


def parse_args(argv):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            conf = read_config(args.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
        sp = sub.choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = set(conf) - known
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        sp.set_defaults(**conf)
        args = parser.parse_args(argv)
    return parser, args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    parser, args = parse_args(argv)
    cfg = RunConfig.from_args(args)
    try:
        return args.func(args, cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except USAGE_ERRORS as exc:
        print(f"balwt: error: {exc}", file=sys.stderr)
        return 2
    except (BalwtError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"balwt: computation failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
