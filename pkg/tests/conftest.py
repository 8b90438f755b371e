import csv

import numpy as np
import pytest

from balwt.instances import diagonal_problem, random_problem


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def problem(rng):
    return random_problem(rng, 60, 6)


@pytest.fixture
def diag_problem(rng):
    return diagonal_problem(rng, 80, 7)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def lalonde_like(path, n_control=727, n_treated=185, k=11, seed=0):
    """Synthetic file with the LaLonde column layout and group sizes."""
    rng = np.random.default_rng(seed)
    names = [f"x{j}" for j in range(k)]
    rows = []
    for t, count in ((0, n_control), (1, n_treated)):
        x = rng.standard_normal((count, k)) + 0.4 * t
        y = x @ np.linspace(1, 2, k) + rng.standard_normal(count)
        rows += [[t, yi, *xi] for yi, xi in zip(y, x)]
    return write_csv(path, ["treat", "re78", *names], rows)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
