import numpy as np
import pytest

from irsa_eh import _backend
from irsa_eh.model import DegreeDistribution, SystemConfig


@pytest.fixture
def default_config():
    # 1000 devices, alpha*U = 1, M = 100, E = 2, eta*M = 2, max degree 5
    return SystemConfig(1000, 100, 0.001, 2, 0.02, 5)


@pytest.fixture
def x3():
    return DegreeDistribution.fixed(3, 5)


@pytest.fixture
def matched():
    return DegreeDistribution.battery_matched(2, 5)


@pytest.fixture(params=_backend.available())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
