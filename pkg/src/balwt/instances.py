"""Random problem generators used by the verification suite and the CLI."""
import numpy as np

from .dataset import ProblemData, problem_from_arrays


def random_problem(rng, n, d, correlated=True, shift_scale=1.0, noise=1.0):
    mix = rng.standard_normal((d, d)) if correlated else np.eye(d)
    x = rng.standard_normal((n, d)) @ mix
    y = x @ rng.standard_normal(d) + noise * rng.standard_normal(n)
    target = x.mean(axis=0) + shift_scale * rng.standard_normal(d)
    return problem_from_arrays(x, y, target_mean=target)


def diagonal_problem(rng, n, d, shift_scale=1.0, noise=1.0):
    """Centered design with orthogonal columns, so phi'phi is diagonal."""
    x = rng.standard_normal((n, d))
    x -= x.mean(axis=0)
    q, _ = np.linalg.qr(x)
    phi = q * rng.uniform(0.5, 3.0, d) * np.sqrt(n)
    phi -= phi.mean(axis=0)
    y = phi @ rng.standard_normal(d) / np.sqrt(n) + noise * rng.standard_normal(n)
    return ProblemData(phi, y, shift_scale * rng.standard_normal(d))
