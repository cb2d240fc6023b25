import numpy as np
import pytest

from shefields.noise import GridSpec


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: full-scale acceptance criteria (slow)")


@pytest.fixture
def small_spec():
    # 64 cells of width 0.05, 100 steps of 1e-3
    return GridSpec(nx=64, length=3.2, dt=1e-3, nt=100)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
