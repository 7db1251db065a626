import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from minhopf.model import Params

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


rates = st.floats(0.2, 5.0, allow_nan=False, allow_infinity=False)


@st.composite
def params(draw, k_lo=-5.0, k_hi=10.0):
    return Params(draw(st.floats(k_lo, k_hi)), draw(rates), draw(rates))


@st.composite
def interior_states(draw, lo=1e-3, hi=20.0):
    return np.array([draw(st.floats(lo, hi)) for _ in range(3)])


# --- acceptance summary --------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def rec(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(passed), detail)

    return rec


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
