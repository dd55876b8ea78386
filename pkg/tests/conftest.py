import numpy as np
import pytest
from hypothesis import strategies as st

from msped.annot_io import FrameAnnotations, GtObject
from msped.geometry import Box


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def int_boxes(max_coord=300, max_side=200):
    return st.builds(Box, st.integers(0, max_coord), st.integers(0, max_coord),
                     st.integers(1, max_side), st.integers(1, max_side))


def real_boxes():
    coord = st.floats(-500, 1000, allow_nan=False, allow_infinity=False)
    side = st.floats(0.5, 400, allow_nan=False, allow_infinity=False)
    return st.builds(Box, coord, coord, side, side)


def person(x, y, w, h, **kw):
    return GtObject(kw.pop("label", "person"), Box(x, y, w, h), **kw)


def frame(objs=(), frame_id="set00/V000/I00000", **kw):
    return FrameAnnotations(frame_id, tuple(objs), **kw)


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.failed:
        _ACCEPTANCE[name] = "FAIL"
    elif report.when == "call":
        _ACCEPTANCE.setdefault(name, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"{status}  {name}")
