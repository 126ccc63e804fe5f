import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lafs.geometry import (
    BoxComponents,
    InvalidInputError,
    Point,
    RotatedBox,
    angle_gap,
    box_from_components,
    normalize_angle,
    polygon_area,
    quad_iou,
    rotate_point,
)
from oracles import raster_iou, rect_vertices

coord = st.floats(-500, 500, allow_nan=False)
dist = st.floats(0.5, 100, allow_nan=False)
angle = st.floats(-math.pi / 2, math.pi / 2, exclude_max=True, allow_nan=False)


@st.composite
def boxes(draw):
    return RotatedBox(draw(coord), draw(coord), draw(dist), draw(dist), draw(angle))


def test_axis_aligned_symmetric():
    box = box_from_components(Point(10, 10), BoxComponents(5, 5, 5, 5, 0.0))
    assert box.quad().tolist() == [[5, 5], [15, 5], [15, 15], [5, 15]]


def test_axis_aligned_offsets():
    box = box_from_components(Point(10, 10), BoxComponents(2, 4, 3, 6, 0.0))
    assert box.quad().tolist() == [[7, 8], [16, 8], [16, 14], [7, 14]]


def test_rotated_components_match_rotation_matrix():
    p = np.array([10.0, 10.0])
    t = math.pi / 6
    flat = np.array([[7, 8], [16, 8], [16, 14], [7, 14]], dtype=float)
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    expected = (flat - p) @ rot.T + p
    box = box_from_components(Point(10, 10), BoxComponents(2, 4, 3, 6, t))
    np.testing.assert_allclose(box.quad(), expected, atol=1e-12)


@given(st.integers(-64, 64), st.integers(-64, 64), *[st.integers(1, 64)] * 4)
def test_theta_zero_is_exact(px, py, t, b, l, r):
    # quarter-integer inputs keep every intermediate exactly representable
    px, py, t, b, l, r = px / 4, py / 4, t / 4, b / 4, l / 4, r / 4
    box = box_from_components(Point(px, py), BoxComponents(t, b, l, r, 0.0))
    assert box.quad().tolist() == [[px - l, py - t], [px + r, py - t], [px + r, py + b], [px - l, py + b]]


@given(coord, coord, dist, dist, dist, dist, angle)
def test_components_contain_their_point(px, py, t, b, l, r, th):
    box = box_from_components(Point(px, py), BoxComponents(t, b, l, r, th))
    u, v = box.local_coords(px, py)
    assert abs(u) < box.w / 2 and abs(v) < box.h / 2


@pytest.mark.parametrize("bad", [math.nan, math.inf, -1.0])
def test_components_reject_bad_values(bad):
    with pytest.raises(InvalidInputError):
        BoxComponents(bad, 1, 1, 1, 0)


def test_box_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        RotatedBox(0, math.nan, 1, 1, 0)


def test_quad_is_counterclockwise_in_image_coordinates():
    box = RotatedBox(3, 4, 6, 2, 0.4)
    assert polygon_area(box.quad()) == pytest.approx(12.0)


def test_normalize_angle_range():
    assert normalize_angle(math.pi / 2) == pytest.approx(-math.pi / 2)
    assert normalize_angle(math.pi) == pytest.approx(0.0, abs=1e-12)
    assert normalize_angle(0.3 + 2 * math.pi) == pytest.approx(0.3)


def test_angle_gap_folds():
    assert angle_gap(0.1, -0.1) == pytest.approx(0.2)
    assert angle_gap(1.5, -1.5) == pytest.approx(math.pi - 3.0)
    assert angle_gap(0.0, math.pi / 2) == pytest.approx(math.pi / 2)


@given(boxes())
def test_round_trip_through_quad(box):
    back = RotatedBox.from_quad(box.quad())
    assert abs(back.cx - box.cx) < 1e-4 and abs(back.cy - box.cy) < 1e-4
    assert abs(back.w - box.w) < 1e-4 and abs(back.h - box.h) < 1e-4
    assert abs(back.theta - box.theta) < 1e-4 or abs(abs(back.theta - box.theta) - math.pi) < 1e-4


@given(boxes())
def test_dict_round_trip(box):
    assert RotatedBox.from_dict(box.to_dict()) == box


# -- IoU ----------------------------------------------------------------------

def test_iou_identical():
    b = RotatedBox(0, 0, 2, 2, 0.0)
    assert quad_iou(b, b) == pytest.approx(1.0)


def test_iou_axis_aligned_third():
    a = RotatedBox(1, 1, 2, 2, 0.0)
    b = RotatedBox(2, 1, 2, 2, 0.0)
    assert quad_iou(a, b) == pytest.approx(1 / 3)


def test_iou_rotated_square():
    a = RotatedBox(0, 0, 2, 2, 0.0)
    b = RotatedBox(0, 0, 2, 2, math.pi / 4)
    oracle = raster_iou(rect_vertices(0, 0, 2, 2, 0), rect_vertices(0, 0, 2, 2, math.pi / 4))
    closed = 8 * (math.sqrt(2) - 1) / (8 - 8 * (math.sqrt(2) - 1))
    assert abs(oracle - closed) < 0.01
    assert abs(quad_iou(a, b) - oracle) < 0.01
    assert quad_iou(a, b) == pytest.approx(closed, abs=1e-9)


def test_iou_zero_area():
    assert quad_iou(RotatedBox(0, 0, 0, 2, 0), RotatedBox(0, 0, 2, 2, 0)) == 0.0


def test_iou_disjoint():
    assert quad_iou(RotatedBox(0, 0, 2, 2, 0.3), RotatedBox(50, 0, 2, 2, 0.3)) == 0.0


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    ab, ba = quad_iou(a, b), quad_iou(b, a)
    assert 0.0 <= ab <= 1.0
    assert ab == pytest.approx(ba, abs=1e-9)


@given(boxes())
def test_self_iou_is_one(a):
    assert quad_iou(a, a) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50)
@given(boxes(), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 2), angle)
def test_iou_matches_raster(a, dx, dy, scale, th):
    b = RotatedBox(a.cx + dx, a.cy + dy, a.w * scale, a.h, th)
    oracle = raster_iou(rect_vertices(a.cx, a.cy, a.w, a.h, a.theta), rect_vertices(b.cx, b.cy, b.w, b.h, b.theta))
    assert abs(quad_iou(a, b) - oracle) <= 0.01


# -- rotation -----------------------------------------------------------------

def test_rotate_quarter_turn():
    p = rotate_point(Point(1, 0), Point(0, 0), math.pi / 2)
    assert p.x == pytest.approx(0.0, abs=1e-12) and p.y == pytest.approx(1.0)


def test_rotate_zero_is_identity():
    assert rotate_point(Point(3.5, -2), Point(1, 1), 0.0) == Point(3.5, -2)


@given(coord, coord, coord, coord, st.floats(-10, 10))
def test_rotate_inverse(px, py, cx, cy, a):
    there = rotate_point(Point(px, py), Point(cx, cy), a)
    back = rotate_point(there, Point(cx, cy), -a)
    assert abs(back.x - px) < 1e-5 and abs(back.y - py) < 1e-5


def test_rotate_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        rotate_point(Point(math.nan, 0), Point(0, 0), 1.0)


def test_contains_shrink():
    box = RotatedBox(5, 5, 10, 10, 0.0)
    assert box.contains(5, 2.5)
    assert not box.contains(5, 2.5, shrink_ratio=0.3)
