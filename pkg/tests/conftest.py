import numpy as np
import pytest

from mbbda.data import from_arrays
from mbbda.simulate import SimConfig, gen_setting


def make_panel(m=6, n_per_group=3, q=5, seed=0, mean=20.0):
    """Small balanced panel of independent negative-binomial counts."""
    rng = np.random.default_rng(seed)
    n = 2 * n_per_group
    counts = rng.negative_binomial(2, 2 / (2 + mean), size=(m, n * q))
    subjects = np.repeat([f"s{j}" for j in range(n)], q)
    times = np.tile(np.arange(q), n)
    groups = np.repeat([0] * n_per_group + [1] * n_per_group, q)
    return from_arrays(counts, subjects, times, groups, group_labels=("a", "b"))


@pytest.fixture
def panel():
    return make_panel()


@pytest.fixture(scope="session")
def setting_z():
    cfg = SimConfig.preset("Z", seed=2024)
    return gen_setting(cfg, 0)


ACCEPTANCE_LINES: list = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def _report(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
