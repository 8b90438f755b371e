import numpy as np
import pytest

from balwt.instances import random_problem
from balwt.simulation import (SyntheticDgpSpec, synthetic_suite, eigenvalue_grid, generate_semisynthetic,
                              generate_synthetic, run_study, target_vector, write_summary_csv)


def test_eigenvalue_grid():
    g = eigenvalue_grid(1e-4, 3.0, 3.0, 50)
    assert g[0] == pytest.approx(3.0) and g[-1] == pytest.approx(1e-4)
    assert np.all(np.diff(g) < 0)
    cube = np.linspace(1e-4 ** (1 / 3), 3 ** (1 / 3), 50) ** 3
    assert np.allclose(g[::-1], cube)
    with pytest.raises(ValueError):
        eigenvalue_grid(3.0, 1.0, 2.0, 5)


def test_targets():
    unit = target_vector(SyntheticDgpSpec(1e-4, 3, 3, 0.1, d=20))
    assert np.linalg.norm(unit) == pytest.approx(1.0)
    assert np.allclose(unit, target_vector(SyntheticDgpSpec(1e-4, 3, 3, 2.0, d=20)))
    const = target_vector(SyntheticDgpSpec(1e-4, 3, 3, 0.1, "constant", 2.0, d=4))
    assert np.allclose(const, 2.0)


def test_generate_synthetic_deterministic():
    spec = SyntheticDgpSpec(1e-8, 3, 3, 0.1, n=300, d=10, seed=5)
    t1, d1 = generate_synthetic(spec)
    t2, d2 = generate_synthetic(spec)
    assert np.array_equal(d1.y_p, d2.y_p)
    assert np.allclose(d1.phi_p.mean(axis=0), 0, atol=1e-12)
    assert np.linalg.norm(t1.beta0) == pytest.approx(1.0) and np.all(t1.beta0 >= 0)
    assert np.allclose(np.linalg.eigvalsh(t1.pop_cov)[::-1], eigenvalue_grid(1e-8, 3, 3, 10))
    assert np.allclose(t1.sample_cov, d1.phi_p.T @ d1.phi_p / 300)


def test_suite_sizes():
    assert len(synthetic_suite()) == 6
    full = synthetic_suite(full=True)
    assert len(full) == 30 and len({s.name for s in full}) == 30


def test_semisynthetic_perturbation(rng):
    data = random_problem(rng, 80, 6)
    base = generate_semisynthetic(data, seed=1, folds=3)
    up = generate_semisynthetic(data, "even_up", 0.5, seed=1, folds=3)
    diff = up.target_mean - base.target_mean
    assert np.allclose(diff[0::2], 0)
    assert np.allclose(diff[1::2], 0.5 * np.linalg.norm(data.phi_q_mean))
    assert np.allclose(base.beta0, up.beta0)


@pytest.fixture(scope="module")
def small_study():
    specs = [SyntheticDgpSpec(1e-4, 3, 3, 0.5, n=120, d=6, seed=2, name="a")]
    dgps = [(s.name, generate_synthetic(s)[0]) for s in specs]
    return dgps


def test_study_runs_and_is_thread_invariant(small_study):
    one = run_study(small_study, replicates=4, seed=1, threads=1)
    two = run_study(small_study, replicates=4, seed=1, threads=2)
    assert one.rows() == two.rows()
    row = one.per_dgp[0]
    assert set(row.scheme_mse) == {"cv_imbalance", "cv_riesz", "cv_outcome"}
    assert row.oracle_mse > 0 and row.oracle_mse_analytic > 0
    for agg in one.aggregates.values():
        assert 0 <= agg["prop_delta_zero"] <= 1


def test_summary_csv(small_study, tmp_path):
    summary = run_study(small_study, replicates=2, seed=0)
    write_summary_csv(summary, str(tmp_path / "s.csv"))
    assert (tmp_path / "s.csv").read_text().splitlines()[0].startswith("dgp,scheme,mse")
    assert (tmp_path / "s_aggregate.csv").exists()
