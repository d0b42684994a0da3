import numpy as np
import pytest

from trusttransfer.data import SyntheticConfig, build_batch, generate_synthetic

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SyntheticConfig(n_participants=12, dim=6, seed=3))


@pytest.fixture(scope="session")
def small_batch(small_dataset):
    return build_batch(small_dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
