import numpy as np
import pytest

from minmaxdrive.sim import make_synthetic_scenarios


@pytest.fixture(scope="session")
def small_corpus():
    return make_synthetic_scenarios(3, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str):
        ACCEPTANCE[number] = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
        print(ACCEPTANCE[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
