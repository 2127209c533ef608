import numpy as np
import pytest

from pulsebranch import SystemConfig, build_table

GRID_STEPS = 600
TMAX = 12.0

_acceptance_lines = []


def record_acceptance(line: str) -> None:
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def times():
    return np.linspace(0.0, TMAX, GRID_STEPS)


@pytest.fixture(scope="session")
def zetas(times):
    return np.exp(-0.5 * times)


_tables = {}


@pytest.fixture(scope="session")
def table_for(zetas):
    """Session cache of 30-order tables on the default grid."""

    def get(gamma_tilde, kmax=30):
        key = (gamma_tilde, kmax)
        if key not in _tables:
            _tables[key] = build_table(SystemConfig.from_ratio(gamma_tilde), zetas, kmax)
        return _tables[key]

    return get
