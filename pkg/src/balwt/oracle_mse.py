"""Design-conditional bias and variance of ridge and double-ridge estimators.

Hyperparameters here are on the per-sample scale: the ridge solve is
(S + lam I)^-1 phi'Y / n with S = phi'phi / n, so lam corresponds to a
penalty of n * lam in the unscaled fitting functions.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidHyperparameter
from .numerics import Eigensystem, eigh_symmetric, log_grid_minimize


@dataclass
class DgpTruth:
    beta0: np.ndarray
    pop_cov: np.ndarray  # per-sample covariance; E[phi'phi] = n * pop_cov
    sample_cov: np.ndarray
    noise_var: float
    target_mean: np.ndarray
    n: int
    design: Optional[np.ndarray] = None
    _eig: Optional[Eigensystem] = field(default=None, repr=False, compare=False)

    @property
    def eig(self) -> Eigensystem:
        if self._eig is None:
            self._eig = eigh_symmetric(self.sample_cov)
        return self._eig

    @property
    def psi(self) -> float:
        return float(self.target_mean @ self.beta0)

    def scaled_target(self, c):
        return DgpTruth(self.beta0, self.pop_cov, self.sample_cov, self.noise_var, c * self.target_mean,
                        self.n, self.design, self._eig)

    def with_noise(self, noise_var):
        return DgpTruth(self.beta0, self.pop_cov, self.sample_cov, noise_var, self.target_mean,
                        self.n, self.design, self._eig)


@dataclass
class MseDecomposition:
    bias_sq: float
    variance: float
    lam: float
    delta: Optional[float] = None

    @property
    def total(self):
        return self.bias_sq + self.variance


def _ratio(num, den):
    # num/den with the pseudoinverse convention 0/0 -> 0
    out = np.zeros_like(den)
    pos = den > 0
    out[pos] = num[pos] / den[pos]
    return out


def _check(*vals):
    for v in vals:
        if not np.isfinite(v) or v < 0:
            raise InvalidHyperparameter(f"hyperparameters must be finite and nonnegative, got {v}")


def ridge_prediction_mse(truth: DgpTruth, lam: float) -> MseDecomposition:
    """Bias^2 and variance of phi beta_ridge as a predictor, weighted by E[phi'phi]."""
    _check(lam)
    s, v = truth.eig.eigenvalues, truth.eig.eigenvectors
    pop = truth.n * (v.T @ truth.pop_cov @ v)
    b = v.T @ truth.beta0
    den = s + lam
    # bias factor lam/(s+lam); directions with s = lam = 0 are not estimated at all
    shrink = np.where(den > 0, _ratio(np.full_like(s, lam), den), 1.0)
    bias = shrink * b
    bias_sq = float(bias @ pop @ bias)
    variance = float(truth.noise_var / truth.n * np.sum(_ratio(s, den**2) * np.diag(pop)))
    return MseDecomposition(bias_sq, variance, lam)


def augmented_gamma(s, lam, delta):
    den = s + lam + delta
    return _ratio(np.full_like(s, delta * lam), den)


def augmented_mse(truth: DgpTruth, lam: float, delta: float) -> MseDecomposition:
    """Bias^2 and variance of the double-ridge estimate of target_mean . beta0."""
    _check(lam, delta)
    s, v = truth.eig.eigenvalues, truth.eig.eigenvectors
    mu = v.T @ truth.target_mean
    b = v.T @ truth.beta0
    gamma = augmented_gamma(s, lam, delta)
    den = s + gamma
    shrink = np.where(den > 0, _ratio(gamma, den), 1.0)
    bias_sq = float((mu @ (shrink * b)) ** 2)
    variance = float(truth.noise_var / truth.n * np.sum(mu**2 * _ratio(s, den**2)))
    return MseDecomposition(bias_sq, variance, lam, delta)


@dataclass
class OracleResult:
    lambda_star: float
    delta_star: float
    lambda_curve: list
    delta_curve: list

    @property
    def delta_at_zero(self):
        return self.delta_star == 0.0


def oracle_hyperparams(truth: DgpTruth, lo=1e-8, hi=1e8, num=49, rtol=1e-6) -> OracleResult:
    """MSE-minimizing lambda for prediction, then delta for the functional given lambda."""
    lam, _, lam_curve = log_grid_minimize(lambda x: ridge_prediction_mse(truth, x).total, lo, hi, num, rtol=rtol)
    delta, _, delta_curve = log_grid_minimize(lambda x: augmented_mse(truth, lam, x).total, lo, hi, num, rtol=rtol)
    return OracleResult(lam, delta, lam_curve, delta_curve)


def rate_diagnostic(sigma_sq: float, lambda_schedule) -> float:
    """Log-log slope of gamma_n = lam^2/(sigma^2 + 2 lam) against lam_n (delta_n = lam_n).

    Only the tail lam < sigma^2/10 enters the fit; when fewer than two points
    fall there (e.g. sigma^2 = 0) the whole schedule is used.
    """
    sched = sorted((float(n), float(l)) for n, l in lambda_schedule)
    lam = np.array([l for _, l in sched])
    if lam.size < 2 or np.any(lam <= 0) or np.any(np.diff(lam) >= 0):
        raise InvalidHyperparameter("lambda schedule must be positive and strictly decreasing in n")
    gamma = lam**2 / (sigma_sq + 2 * lam)
    tail = lam < sigma_sq / 10
    if tail.sum() < 2:
        tail = np.ones_like(lam, dtype=bool)
    return float(np.polyfit(np.log(lam[tail]), np.log(gamma[tail]), 1)[0])
