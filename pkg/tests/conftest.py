import numpy as np
import pytest

from eqscope.conic import get_backend

CRITERIA: dict = {}


@pytest.fixture(scope="session")
def backend():
    return get_backend("clarabel")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    def record(number: int, ok: bool, detail: str = "") -> None:
        CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        if n in CRITERIA:
            ok, detail = CRITERIA[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
