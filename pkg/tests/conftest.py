import math

import numpy as np
import pytest
from scipy.stats import norm


ACCEPTANCE_LINES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or acceptance checks")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


def pam_closed_form(x, t, c=1.0):
    """u(t,x) for constant potential c started from the left half-line indicator."""
    return math.exp(c * t) * norm.cdf(-np.asarray(x) / math.sqrt(t))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
