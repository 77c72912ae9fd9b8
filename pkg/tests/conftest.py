import numpy as np
import pytest

from perpfund.market import BlackScholes, RandomSource, simulate_q
from perpfund.paths import TimeGrid


@pytest.fixture
def bs1():
    return BlackScholes.diagonal([0.05], [0.3], 0.02)


@pytest.fixture
def bs2():
    return BlackScholes.diagonal([0.05, 0.03], [0.3, 0.2], 0.02)


@pytest.fixture
def q_ens1(bs1):
    return simulate_q(bs1, [1.0], TimeGrid(0.0, 0.01, 100), RandomSource(7), 2000, scheme="exact")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._criteria = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; call as criterion(n, passed, detail)."""

    def record(n, passed, detail=""):
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config._criteria.append((n, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = sorted(getattr(config, "_criteria", []))
    if rows:
        terminalreporter.section("acceptance criteria")
        for _, line in rows:
            terminalreporter.write_line(line)
