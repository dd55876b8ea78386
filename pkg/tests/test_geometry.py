import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from msped.geometry import Box, clip, iou, iou_matrix, pad, union_box

from conftest import int_boxes, real_boxes


def raster_iou(a, b):
    """Count unit pixels covered by integer boxes on an explicit grid."""
    w = int(max(a.x2, b.x2)) + 1
    h = int(max(a.y2, b.y2)) + 1
    ma = np.zeros((h, w), bool)
    mb = np.zeros((h, w), bool)
    ma[int(a.y):int(a.y2), int(a.x):int(a.x2)] = True
    mb[int(b.y):int(b.y2), int(b.x):int(b.x2)] = True
    return (ma & mb).sum() / (ma | mb).sum()


def test_box_rejects_degenerate():
    with pytest.raises(ValueError):
        Box(0, 0, 0, 5)
    with pytest.raises(ValueError):
        Box(0, 0, 5, -1)
    with pytest.raises(ValueError):
        Box(math.nan, 0, 5, 5)
    with pytest.raises(ValueError):
        Box(0, math.inf, 5, 5)


def test_iou_examples():
    a = Box(0, 0, 10, 10)
    assert iou(a, Box(0, 0, 10, 10)) == 1.0
    assert iou(a, Box(20, 20, 5, 5)) == 0.0
    b = Box(5, 5, 10, 10)
    # 5x5 overlap over 100 + 100 - 25
    assert iou(a, b) == pytest.approx(25 / 175, abs=1e-15)
    assert raster_iou(a, b) == pytest.approx(25 / 175, abs=1e-15)


def test_touching_boxes_do_not_overlap():
    assert iou(Box(0, 0, 10, 10), Box(10, 0, 10, 10)) == 0.0


@given(int_boxes(), int_boxes())
def test_iou_matches_raster(a, b):
    assert abs(iou(a, b) - raster_iou(a, b)) <= 2 / min(a.area, b.area)


@given(real_boxes(), real_boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert iou(a, a) == 1.0


@given(st.lists(real_boxes(), min_size=1, max_size=6), st.lists(real_boxes(), min_size=1, max_size=6))
def test_iou_matrix_agrees_with_scalar(xs, ys):
    m = iou_matrix(xs, ys)
    assert m.shape == (len(xs), len(ys))
    for i, a in enumerate(xs):
        for j, b in enumerate(ys):
            assert m[i, j] == iou(a, b)


def test_iou_matrix_empty():
    assert iou_matrix([], [Box(0, 0, 1, 1)]).shape == (0, 1)


def test_union_box_examples():
    assert union_box(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == Box(0, 0, 10, 10)
    assert union_box(Box(0, 0, 10, 10), Box(5, 5, 10, 10)) == Box(0, 0, 15, 15)
    assert union_box(Box(2, 3, 4, 4), Box(0, 0, 1, 1)) == Box(0, 0, 6, 7)


@given(int_boxes(), int_boxes())
def test_union_box_is_minimal_container(a, b):
    u = union_box(a, b)
    assert u.contains(a) and u.contains(b)
    # every side touches one of the inputs, so no smaller box contains both
    assert u.x == min(a.x, b.x) and u.y == min(a.y, b.y)
    assert u.x2 == max(a.x2, b.x2) and u.y2 == max(a.y2, b.y2)
    if a.contains(b):
        assert u == a


def test_pad_examples():
    assert pad(Box(100, 100, 50, 100), 0.2) == Box(90, 80, 70, 140)
    b = Box(3.5, 1.25, 7, 9)
    assert pad(b, 0) == b
    assert pad(Box(0, 0, 10, 10), 0.5) == Box(-5, -5, 20, 20)
    with pytest.raises(ValueError):
        pad(b, -0.1)


@given(st.builds(Box, st.integers(-100, 100), st.integers(-100, 100),
                 st.integers(1, 100), st.integers(1, 100)),
       st.sampled_from([0.0, 0.1, 0.2, 0.25, 0.5, 1.0]))
def test_pad_preserves_center(b, f):
    (cx, cy), (px, py) = b.center, pad(b, f).center
    assert px == pytest.approx(cx, abs=1e-9) and py == pytest.approx(cy, abs=1e-9)


@given(st.builds(Box, st.integers(-100, 100), st.integers(-100, 100),
                 st.integers(1, 100), st.integers(1, 100)),
       st.sampled_from([0.0, 0.25, 0.5, 1.0]))
def test_pad_center_exact_for_dyadic_factors(b, f):
    assert pad(b, f).center == b.center


@given(real_boxes(), st.floats(0, 2), st.floats(0, 2))
def test_pad_area_monotone(b, f1, f2):
    lo, hi = sorted((f1, f2))
    assert pad(b, lo).area <= pad(b, hi).area


def test_clip_examples():
    assert clip(Box(-5, -5, 20, 20), 640, 512) == Box(0, 0, 15, 15)
    assert clip(Box(10, 10, 5, 5), 640, 512) == Box(10, 10, 5, 5)
    assert clip(Box(700, 600, 10, 10), 640, 512) is None
    assert clip(Box(630, 500, 20, 20), 640, 512) == Box(630, 500, 10, 12)
