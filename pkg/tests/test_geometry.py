import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geotrack.errors import EmptyInputError
from geotrack.geometry import (Box3D, apply_box_offset, box_from_canonical, box_to_canonical,
                               build_masks, center_distance, crop_mask, crop_region,
                               farthest_point_sample, from_canonical, iou3d, merge_regions,
                               normalize_angle, points_in_box, to_canonical)

import oracles

coord = st.floats(-20, 20, allow_nan=False)
size = st.floats(0.2, 5.0)
angle = st.floats(-10, 10, allow_nan=False)
boxes = st.builds(Box3D, coord, coord, st.floats(-2, 2), angle, size, size, size)


def test_box_rejects_nonpositive_size():
    with pytest.raises(ValueError):
        Box3D(0, 0, 0, 0, 0.0, 1, 1)


@given(angle)
def test_yaw_is_normalized(theta):
    y = Box3D(0, 0, 0, theta, 1, 1, 1).yaw
    assert -math.pi <= y < math.pi
    assert math.isclose(math.cos(y), math.cos(theta), abs_tol=1e-9)
    assert math.isclose(math.sin(y), math.sin(theta), abs_tol=1e-9)


def test_normalize_angle_pi_maps_to_minus_pi():
    assert normalize_angle(math.pi) == -math.pi


# ---------------------------------------------------------------- FPS


def test_fps_line_example():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [10.0, 0, 0]])
    assert farthest_point_sample(pts, 2, 0).tolist() == [0, 2]


def test_fps_full_sample_is_permutation(rng):
    pts = rng.normal(size=(30, 3))
    assert sorted(farthest_point_sample(pts, 30).tolist()) == list(range(30))


def test_fps_matches_greedy_oracle(rng):
    for n_points in (1, 2, 7, 50, 120):
        pts = rng.normal(size=(n_points, 3))
        for n in (1, 8, n_points):
            assert farthest_point_sample(pts, n).tolist() == oracles.greedy_fps(pts, n)


def test_fps_ties_go_to_lowest_index():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    assert farthest_point_sample(pts, 2).tolist() == [0, 1]


def test_fps_pads_cyclically():
    pts = np.array([[0.0, 0, 0], [3.0, 0, 0], [1.0, 0, 0]])
    assert farthest_point_sample(pts, 7).tolist() == [0, 1, 2, 0, 1, 2, 0]


def test_fps_duplicates_are_padded_not_reselected():
    pts = np.zeros((3, 3))
    assert farthest_point_sample(pts, 5).tolist() == [0, 1, 2, 0, 1]


def test_fps_empty_cloud():
    with pytest.raises(EmptyInputError):
        farthest_point_sample(np.zeros((0, 3)), 4)


# ------------------------------------------------------- frames and boxes


def test_points_in_box_examples():
    box = Box3D(0, 0, 0, 0, 2, 2, 2)
    assert points_in_box(np.array([[0.9, 0, 0]]), box)[0]
    assert not points_in_box(np.array([[1.1, 0, 0]]), box)[0]
    assert points_in_box(np.array([[1.0, 1.0, -1.0]]), box)[0]


def test_points_in_rotated_box_matches_inverse_rotation(rng):
    box = Box3D(0, 0, 0, math.pi / 4, 2, 0.2, 1)
    on_axis = np.array([[1.0, 1.0, 0.0]]) / math.sqrt(2)
    pts = np.concatenate([on_axis, rng.uniform(-1.2, 1.2, size=(500, 3))])
    np.testing.assert_array_equal(points_in_box(pts, box), oracles.inside(pts, box))


@given(boxes, st.lists(st.tuples(coord, coord, coord), min_size=1, max_size=10))
def test_canonical_round_trip(box, pts):
    p = np.array(pts)
    np.testing.assert_allclose(from_canonical(to_canonical(p, box), box), p, atol=1e-9)


@given(boxes, boxes)
def test_box_canonical_round_trip(box, ref):
    back = box_from_canonical(box_to_canonical(box, ref), ref)
    np.testing.assert_allclose(back.center, box.center, atol=1e-9)
    assert abs(normalize_angle(back.yaw - box.yaw)) < 1e-9


def test_apply_box_offset_examples():
    b = Box3D(1, 2, 3, 0.3, 1, 2, 3)
    assert apply_box_offset(b, (0, 0, 0, 0)) == b
    spun = apply_box_offset(b, (0, 0, 0, 2 * math.pi))
    assert spun.yaw == pytest.approx(b.yaw, abs=1e-12)
    q = apply_box_offset(Box3D(0, 0, 0, math.pi / 2, 1, 1, 1), (1, 0, 0, 0))
    np.testing.assert_allclose(q.center, [0, 1, 0], atol=1e-15)


# -------------------------------------------------------------- cropping


def test_crop_all_inside_is_recentered_identity(rng):
    box = Box3D(5, -3, 1, 0.0, 4, 4, 4)
    pts = box.center + rng.uniform(-1, 1, size=(20, 3))
    region = crop_region(pts, box, 0.0, 20)
    assert sorted(region.source_indices.tolist()) == list(range(20))
    np.testing.assert_allclose(region.points, pts[region.source_indices] - box.center, atol=1e-12)


def test_crop_without_survivors_is_degenerate():
    region = crop_region(np.array([[100.0, 100, 0]]), Box3D(0, 0, 0, 0, 1, 1, 1), 1.0, 6)
    assert region.degenerate
    np.testing.assert_array_equal(region.points, np.zeros((6, 3)))


def test_crop_survivors_match_brute_force(rng):
    from geotrack.synthdata import DESK_CATEGORIES, generate_sequence
    frame = generate_sequence(DESK_CATEGORIES[0], 3, 11).frames[1]
    for enlarge, limit in ((2.0, False), (1.0, True)):
        keep = crop_mask(frame.points, frame.box, enlarge, limit)
        b = frame.box
        grown = Box3D(b.x, b.y, b.z, b.yaw, b.w + enlarge, b.l + enlarge, b.h if limit else 1e9)
        np.testing.assert_array_equal(keep, oracles.inside(frame.points, grown))


def test_crop_keeps_exact_count_and_frame(rng):
    box = Box3D(1, 1, 0, 1.0, 2, 3, 1)
    pts = rng.uniform(-4, 6, size=(400, 3))
    region = crop_region(pts, box, 2.0, 32)
    assert region.points.shape == (32, 3)
    np.testing.assert_allclose(from_canonical(region.points, box), pts[region.source_indices], atol=1e-12)


def test_merge_regions_is_object_centric(rng):
    a = crop_region(rng.normal(size=(50, 3)), Box3D(0, 0, 0, 0, 3, 3, 3), 0.0, 16)
    b = crop_region(rng.normal(size=(50, 3)) + 10, Box3D(10, 10, 10, 1.0, 3, 3, 3), 0.0, 16)
    merged = merge_regions(a, b, 24)
    pool = np.concatenate([b.points, a.points])
    assert merged.origin_box == b.origin_box
    assert all(any(np.array_equal(p, q) for q in pool) for p in merged.points)


def test_masks():
    box = Box3D(0, 0, 0, 0, 2, 2, 2)
    pts = np.array([[0.0, 0, 0], [3.0, 0, 0]])
    region = crop_region(pts, Box3D(0, 0, 0, 0, 10, 10, 10), 0.0, 2)
    mask = build_masks(region, box, "template")
    assert mask.shape == (2, 1)
    inside = points_in_box(region.points, box)
    np.testing.assert_array_equal(mask[:, 0], np.where(inside, 0.8, 0.2))
    np.testing.assert_array_equal(build_masks(region, box, "search"), np.full((2, 1), 0.5))


# ------------------------------------------------------------------- IoU


def test_iou_examples():
    a = Box3D(0, 0, 0, 0, 1, 1, 1)
    assert iou3d(a, a) == 1.0
    assert iou3d(a, Box3D(100, 0, 0, 0, 1, 1, 1)) == 0.0
    assert iou3d(a, Box3D(0.5, 0, 0, 0, 1, 1, 1)) == pytest.approx(1 / 3, abs=1e-12)
    octagon = 2 * math.sqrt(2) - 2
    assert iou3d(a, Box3D(0, 0, 0, math.pi / 4, 1, 1, 1)) == pytest.approx(octagon / (2 - octagon), abs=1e-12)
    assert iou3d(a, Box3D(0, 0, 0, math.pi / 4, 1, 1, 1)) == pytest.approx(0.70711, abs=0.01)


def test_iou_vertical_disjoint():
    assert iou3d(Box3D(0, 0, 0, 0, 1, 1, 1), Box3D(0, 0, 1.5, 0, 1, 1, 1)) == 0.0


def test_iou_matches_monte_carlo(rng):
    for _ in range(5):
        a = Box3D(*rng.uniform(-1, 1, 3), rng.uniform(-3, 3), *rng.uniform(0.5, 3, 3))
        b = Box3D(*(a.center + rng.uniform(-1, 1, 3)), rng.uniform(-3, 3), *rng.uniform(0.5, 3, 3))
        assert iou3d(a, b) == pytest.approx(oracles.monte_carlo_iou(a, b, 200_000, rng), abs=0.01)


@given(boxes, boxes)
def test_iou_is_symmetric_and_bounded(a, b):
    v = iou3d(a, b)
    assert v == iou3d(b, a)
    assert 0.0 <= v <= 1.0


@given(boxes, boxes, st.tuples(coord, coord, coord))
def test_iou_is_translation_invariant(a, b, t):
    moved = iou3d(a.translated(t), b.translated(t))
    assert moved == pytest.approx(iou3d(a, b), abs=1e-9)


@given(boxes, boxes)
def test_iou_is_yaw_periodic(a, b):
    spun = Box3D(a.x, a.y, a.z, a.yaw + 2 * math.pi, a.w, a.l, a.h)
    assert iou3d(spun, b) == pytest.approx(iou3d(a, b), abs=1e-9)


@given(boxes)
def test_iou_of_box_with_itself(a):
    assert iou3d(a, a) == pytest.approx(1.0, abs=1e-9)


def test_center_distance():
    assert center_distance(Box3D(0, 0, 0, 0, 1, 1, 1), Box3D(3, 4, 0, 1, 2, 2, 2)) == 5.0
