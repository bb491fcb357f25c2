import numpy as np
import pytest

from jointcal import SampleFrame

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def three_unit_frame():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    return SampleFrame.from_arrays([1.0, 1.0, 1.0], X, ["x1", "x2"])
