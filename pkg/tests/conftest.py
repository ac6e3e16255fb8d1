import numpy as np
import pytest

from nlsinverse.spectral import build_grid, eigendecompose

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid_pi():
    """127 interior nodes on (0, pi)."""
    return build_grid(1, np.pi, 127, 0.3)


@pytest.fixture(scope="session")
def op_pi(grid_pi):
    return eigendecompose(grid_pi, np.zeros(grid_pi.n))


@pytest.fixture(scope="session")
def grid_unit():
    return build_grid(1, 1.0, 63, 0.15)


@pytest.fixture(scope="session")
def grid_square():
    return build_grid(2, 1.0, 15, 0.15)


@pytest.fixture(scope="session")
def op_square(grid_square):
    return eigendecompose(grid_square, np.zeros(grid_square.n))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
