import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def std_gauss_1d():
    from langevin_lab.targets import GaussianOracle

    return GaussianOracle.standard(1)


@pytest.fixture
def unit_disc():
    from langevin_lab.geometry import ball_body

    return ball_body(1.0, 2)


def mc_se(x):
    """Standard error of the mean of a sample."""
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(x.size))


_AC_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one acceptance line; returns ``ok`` for asserting."""
    lines = request.config.stash.setdefault(_AC_KEY, [])

    def record(name, ok, detail=""):
        line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_AC_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
