import numpy as np
import pytest

from volcp.inference import McConfig, simulate_argmax_law, simulate_bridge_sup

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def bridge_table():
    """Trimmed (0.05) unweighted bridge-sup table on the n = 5000 grid."""
    return simulate_bridge_sup(0.05, False, McConfig(paths=20000, seed=11, grid=5000))


@pytest.fixture(scope="session")
def weighted_table():
    return simulate_bridge_sup(0.05, True, McConfig(paths=5000, seed=13, grid=5000))


@pytest.fixture(scope="session")
def argmax_table():
    return simulate_argmax_law(McConfig(paths=20000, seed=12, horizon=50.0, step=0.01))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
