import numpy as np
import pytest

from galaxymorph.dataset import Dataset, axis_centers, generate_synthetic

# (criterion id, PASS/FAIL/SKIP, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"[{status}] {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs_6000():
    """Criterion-3 data: 3 classes, centres 6 spreads apart, d=10."""
    return generate_synthetic(6000, axis_centers(6.0), 1.0, seed=3)


def make_dataset(features, labels, names=None):
    features = np.asarray(features, dtype=float)
    names = names or [f"f{j}" for j in range(features.shape[1])]
    return Dataset(features, labels, names)
