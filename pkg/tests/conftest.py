import numpy as np
import pytest

from caputo_ms import (
    BasePoint,
    DrivingSystem,
    FracParams,
    NoiseParams,
    TimeGrid,
    linear_decay_field,
)

BASELINE = dict(alpha=0.75, varrho=4.0, hurst=0.7, lam=1.0, kappa=0.5, omega=1.0)

ACCEPTANCE_LINES = []


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # emit one line per acceptance criterion after capture has ended
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fp():
    return FracParams(alpha=BASELINE["alpha"], varrho=BASELINE["varrho"])


@pytest.fixture(scope="session")
def npar():
    return NoiseParams(hurst=BASELINE["hurst"], lam=BASELINE["lam"])


@pytest.fixture(scope="session")
def field():
    return linear_decay_field(BASELINE["kappa"])


@pytest.fixture(scope="session")
def sysd():
    return DrivingSystem(omega=BASELINE["omega"])


@pytest.fixture(scope="session")
def origin():
    return BasePoint(0.0)


@pytest.fixture(scope="session")
def small_grid():
    return TimeGrid(horizon=1.0, dt=1.0 / 64.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
