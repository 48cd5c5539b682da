import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparsedom.generators import named_fixtures, uniform_line
from sparsedom.operators import Kernel
from sparsedom.space import DominatingFunction, default_dominating

settings.register_profile(
    "repo", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one ``criterion N: PASS|FAIL ...`` line for the summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def emit(n, ok, detail):
        lines.append((n, f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"))

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def line():
    return uniform_line(10)


@pytest.fixture
def line_lambda():
    return DominatingFunction.power(3.0, 1.0)


@pytest.fixture
def fixtures():
    return named_fixtures()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def kernel_for(space, m=2):
    return Kernel(default_dominating(space), m=m)
