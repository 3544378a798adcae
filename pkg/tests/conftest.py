import sys

import numpy as np
import pytest

from zapslab.schedule import build_linear_schedule
from zapslab.wavelet import WaveletBasis


@pytest.fixture(scope="session")
def schedule():
    return build_linear_schedule(1000)


@pytest.fixture(scope="session")
def db4():
    return WaveletBasis("db4", 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
