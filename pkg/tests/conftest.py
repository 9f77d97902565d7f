import numpy as np
import pytest

from carmadelay.kernels import CarmaModel


@pytest.fixture
def ou():
    return CarmaModel([[[2.0]]])


@pytest.fixture
def carma21():
    # P = z^2 + 4z + 3, Q = z + 2
    return CarmaModel([[[4.0]], [[3.0]]], [[[2.0]]])


@pytest.fixture
def carma31():
    # P = (z + 1)^3, Q = z + 2
    return CarmaModel([[[3.0]], [[3.0]], [[1.0]]], [[[2.0]]])


@pytest.fixture
def carma21_2d():
    return CarmaModel([[[3.0, 0.5], [0.2, 4.0]], [[2.0, 0.3], [0.1, 3.0]]],
                      [[[2.0, 0.4], [0.1, 3.0]]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
