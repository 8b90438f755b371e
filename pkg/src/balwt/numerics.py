"""Dense linear algebra shared by the estimators.

Thin wrappers over numpy.linalg that fix a rank policy and a descending
eigenvalue order, so every caller treats near-singular directions the same way.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, InvalidSplit


@dataclass(frozen=True)
class RankPolicy:
    # singular values below relative_tolerance * largest count as zero
    relative_tolerance: float = 1e-12


DEFAULT_POLICY = RankPolicy()


@dataclass(frozen=True)
class Eigensystem:
    eigenvalues: np.ndarray  # descending, nonnegative
    eigenvectors: np.ndarray  # columns are eigenvectors

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def _finite(a, name="input"):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return a


def eigh_symmetric(a) -> Eigensystem:
    """Eigendecomposition of a symmetric PSD matrix, eigenvalues descending.

    Small negative eigenvalues produced by rounding are clipped to zero.
    """
    a = _finite(a, "matrix")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {a.shape}")
    vals, vecs = np.linalg.eigh((a + a.T) / 2.0)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    return Eigensystem(vals, vecs[:, order])


def gram_eigensystem(phi, policy: RankPolicy = DEFAULT_POLICY) -> Eigensystem:
    """Eigensystem of phi.T @ phi computed from the SVD of phi.

    Going through the SVD keeps tiny singular values accurate, and the
    returned basis is complete (d columns) even when d > n; directions
    outside the row space get eigenvalue exactly zero.
    """
    phi = _finite(phi, "design")
    n, d = phi.shape
    if n == 0 or d == 0:
        return Eigensystem(np.zeros(d), np.eye(d))
    # the complete right basis is only needed when d > n (null directions)
    _, s, vt = np.linalg.svd(phi, full_matrices=d > n)
    s = np.where(s > policy.relative_tolerance * s.max(initial=0.0), s, 0.0)
    vals = np.zeros(d)
    vals[: s.size] = s**2
    return Eigensystem(vals, vt.T)


def pseudoinverse(a, policy: RankPolicy = DEFAULT_POLICY) -> np.ndarray:
    a = _finite(a, "matrix")
    if a.size == 0:
        return np.zeros(a.shape[::-1])
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    keep = s > policy.relative_tolerance * s.max(initial=0.0)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (vt.T * inv) @ u.T


def min_norm_solve(a, b, policy: RankPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Least-squares solution of a @ x = b with the smallest Euclidean norm."""
    a = _finite(a, "matrix")
    b = _finite(b, "right-hand side")
    return pseudoinverse(a, policy) @ b


def spectral_solve(eig: Eigensystem, shift, rhs) -> np.ndarray:
    """Solve (V diag(s + shift) V^T) x = rhs, treating zero pivots as a pseudoinverse.

    ``shift`` is a scalar or a vector of per-direction shifts in the
    eigenbasis.
    """
    v = eig.eigenvectors
    denom = eig.eigenvalues + np.broadcast_to(np.asarray(shift, dtype=float), eig.eigenvalues.shape)
    inv = np.zeros_like(denom)
    pos = denom > 0
    inv[pos] = 1.0 / denom[pos]
    return v @ (inv * (v.T @ rhs))


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed matrix in SO(d) via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def soft_threshold(x, t):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / (1.0 + np.abs(a)), initial=0.0))


def make_folds(n: int, folds: int, seed) -> list:
    """Seeded shuffle of range(n) cut into ``folds`` contiguous blocks."""
    if folds < 2 or folds > n:
        raise InvalidSplit(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(block) for block in np.array_split(order, folds)]


def log_grid_minimize(fn, lo, hi, num=49, include_zero=True, rtol=1e-6):
    """Minimize a scalar function of a nonnegative hyperparameter.

    Evaluates 0 (optionally) and a log-spaced grid on [lo, hi], then refines
    around the best grid point with bounded Brent search in log space.
    Returns (best_x, best_value, evaluations) where evaluations is a list of
    (x, value) pairs sorted by x.
    """
    from scipy.optimize import minimize_scalar

    grid = np.logspace(np.log10(lo), np.log10(hi), num)
    points = ([0.0] if include_zero else []) + list(grid)
    values = [fn(x) for x in points]
    evals = dict(zip(points, values))
    i = int(np.argmin(values))
    best_x, best_v = points[i], values[i]
    if best_x > 0:
        j = i - (1 if include_zero else 0)
        left = grid[j - 1] if j > 0 else grid[0] / 100.0
        right = grid[j + 1] if j + 1 < num else grid[-1]
        if right > left:
            res = minimize_scalar(lambda u: fn(float(np.exp(u))), bounds=(np.log(left), np.log(right)),
                                  method="bounded", options={"xatol": rtol})
            x = float(np.exp(res.x))
            v = fn(x)
            evals[x] = v
            if v < best_v:
                best_x, best_v = x, v
    return best_x, best_v, sorted(evals.items())
