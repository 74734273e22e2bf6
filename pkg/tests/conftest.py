import numpy as np
import pytest

from unmark import synth, watermark

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ssw_victim():
    v = watermark.SpreadSpectrumVictim(11)
    v.calibrate(synth.synth_dataset("speechlike", 100, 11))
    return v


@pytest.fixture(scope="session")
def qim_victim():
    return watermark.QimVictim(12)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
