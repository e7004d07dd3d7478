import os

import numpy as np
import pytest
from hypothesis import settings

from coopmc.channel import DiffusionParams, ProtocolTiming
from coopmc.schemes import report_share
from coopmc.topology import build_symmetric_ring

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def criterion():
    """Record a criterion verdict for the end-of-run summary, then assert it."""

    def record(n, ok, detail):
        CRITERIA[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record


@pytest.fixture(scope="session")
def timing():
    return ProtocolTiming()


@pytest.fixture(scope="session")
def ring3():
    return build_symmetric_ring(3)


@pytest.fixture(scope="session")
def params3():
    return DiffusionParams(S_B=report_share(3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
