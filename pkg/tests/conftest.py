import numpy as np
import pytest

from sblab.schedule import make_constant_schedule, make_symmetric_schedule


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def quarter_schedule():
    # uniform gamma = 0.25 over four steps
    return make_constant_schedule(4, 0.25)


@pytest.fixture
def sym_schedule():
    return make_symmetric_schedule(6, 1.0, 4.0, normalize=True)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion():
    def record(number, ok, detail=""):
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
