import numpy as np
import pytest

from palmdeid import geometry, synth
from palmdeid.exceptions import (
    DegenerateKeypoints,
    EmptyIntersection,
    EmptyMask,
    SizeMismatch,
)


def kp_with_palm(points7):
    """Build 21 keypoints whose palm indices carry the given 7 points."""
    pts = np.tile(np.asarray(points7[0], dtype=np.float64), (21, 1))
    for idx, p in zip(geometry.PALM_INDICES, points7):
        pts[idx] = p
    return geometry.HandKeypoints(pts)


# independent oracles ------------------------------------------------------

def gift_wrap_hull(points):
    """Jarvis march, used as an independent hull oracle."""
    pts = [tuple(p) for p in np.unique(np.asarray(points, float), axis=0)]
    if len(pts) < 3:
        return np.asarray(pts)
    start = min(pts)
    hull = [start]
    current = start
    while True:
        candidate = pts[0] if pts[0] != current else pts[1]
        for p in pts:
            if p == current:
                continue
            cross = (candidate[0] - current[0]) * (p[1] - current[1]) - (
                candidate[1] - current[1]
            ) * (p[0] - current[0])
            if cross < 0:
                candidate = p
            elif cross == 0:
                d_c = (candidate[0] - current[0]) ** 2 + (candidate[1] - current[1]) ** 2
                d_p = (p[0] - current[0]) ** 2 + (p[1] - current[1]) ** 2
                if d_p > d_c:
                    candidate = p
        current = candidate
        if current == start:
            break
        hull.append(current)
    return np.asarray(hull)


def shoelace(vertices):
    v = np.asarray(vertices, float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)))


def point_in_convex(point, vertices):
    v = np.asarray(vertices, float)
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        cross = (b[0] - a[0]) * (point[1] - a[1]) - (b[1] - a[1]) * (point[0] - a[0])
        if cross < -1e-9:
            return False
    return True


# palm_polygon -------------------------------------------------------------

def test_hull_of_square_with_interior_points():
    pts = [(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5), (0.25, 0.5), (0.5, 0.25)]
    hull = geometry.palm_polygon(kp_with_palm(pts))
    assert len(hull) == 4
    assert geometry.polygon_area(hull) == pytest.approx(1.0)
    assert geometry.polygon_area(hull) > 0  # counter-clockwise


def test_hull_identical_points_degenerate():
    with pytest.raises(DegenerateKeypoints):
        geometry.palm_polygon(kp_with_palm([(5.0, 5.0)] * 7))


def test_hull_collinear_degenerate():
    pts = [(float(i), 2.0 * i) for i in range(7)]
    with pytest.raises(DegenerateKeypoints):
        geometry.palm_polygon(kp_with_palm(pts))


def test_hull_contains_every_palm_point():
    rng = np.random.default_rng(11)
    for _ in range(50):
        pts = rng.uniform(0, 100, size=(7, 2))
        kp = kp_with_palm(pts)
        hull = geometry.palm_polygon(kp)
        for p in kp.palm_points():
            assert point_in_convex(p, hull)


def test_hull_matches_independent_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        pts = rng.uniform(0, 50, size=(7, 2))
        ours = geometry.palm_polygon(kp_with_palm(pts))
        oracle = gift_wrap_hull(pts)
        assert shoelace(ours) == pytest.approx(shoelace(oracle), abs=1e-9)
        assert {tuple(np.round(p, 9)) for p in ours} == {
            tuple(np.round(p, 9)) for p in oracle
        }


# full_roi_square / scaled_roi ----------------------------------------------

def test_full_roi_wide_bbox():
    pts = [(150, 120), (250, 120), (150, 180), (250, 180), (200, 150), (200, 160), (210, 140)]
    sq = geometry.full_roi_square(kp_with_palm(pts))
    assert sq.side == 100
    assert sq.center == (200.0, 150.0)
    assert sq.scale_tag == "full"


def test_full_roi_tall_bbox():
    pts = [(0, 0), (60, 0), (0, 100), (60, 100), (30, 50), (10, 40), (20, 70)]
    assert geometry.full_roi_square(kp_with_palm(pts)).side == 100


def test_full_roi_degenerate():
    with pytest.raises(DegenerateKeypoints):
        geometry.full_roi_square(kp_with_palm([(1.0, 2.0)] * 7))


def test_scaled_roi_half_and_identity():
    full = geometry.RoiSquare(center=(10.0, 20.0), side=200, scale_tag="full")
    half = geometry.scaled_roi(full, 0.5)
    assert half.side == 100 and half.scale_tag == "medium"
    same = geometry.scaled_roi(full, 1.0)
    assert same == full


def test_scaled_roi_clamps_to_minimum():
    small = geometry.scaled_roi(geometry.RoiSquare((0.0, 0.0), 20, "full"), 0.1)
    assert small.side == 4 and small.scale_tag == "small"


def test_scaled_roi_nesting_and_ratio():
    rng = np.random.default_rng(5)
    for _ in range(50):
        side = int(rng.integers(40, 400))
        full = geometry.RoiSquare((0.0, 0.0), side, "full")
        medium = geometry.scaled_roi(full, 0.5)
        small = geometry.scaled_roi(full, 0.1)
        assert abs(medium.side - round(0.5 * side)) <= 1
        assert abs(small.side - round(0.1 * side)) <= 1 or small.side == 4
        assert small.side <= medium.side <= full.side  # shared center => nesting


# extract_roi_image ---------------------------------------------------------

def test_extract_constant_image():
    img = np.full((200, 200), 0.5)
    out = geometry.extract_roi_image(img, geometry.RoiSquare((77.3, 61.9), 90, "full"))
    assert out.shape == (128, 128)
    np.testing.assert_allclose(out, 0.5)


def test_extract_outside_raises():
    img = np.zeros((50, 50))
    with pytest.raises(EmptyIntersection):
        geometry.extract_roi_image(img, geometry.RoiSquare((500.0, 500.0), 20, "full"))


def test_extract_aligned_crop_is_exact():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 1, size=(200, 220))
    sq = geometry.RoiSquare((63.5, 63.5), 128, "full")
    out = geometry.extract_roi_image(img, sq)
    assert np.array_equal(out, img[0:128, 0:128])


def test_extract_values_stay_in_range():
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 1, size=(160, 160))
    out = geometry.extract_roi_image(img, geometry.RoiSquare((10.0, 150.0), 90, "full"))
    assert out.min() >= 0.0 and out.max() <= 1.0


# build_mask / composite_back ------------------------------------------------

def test_build_mask_inside_segment_equals_polygon():
    seg = np.ones((60, 60), bool)
    poly = np.array([(10.0, 10.0), (40.0, 10.0), (40.0, 40.0), (10.0, 40.0)])
    mask = geometry.build_mask(poly, seg)
    assert np.array_equal(mask.raster, geometry.rasterize_convex_polygon(poly, (60, 60)))
    assert mask.coverage > 0


def test_build_mask_outside_segment_raises():
    seg = np.zeros((60, 60), bool)
    seg[:5, :5] = True
    poly = np.array([(30.0, 30.0), (50.0, 30.0), (50.0, 50.0), (30.0, 50.0)])
    with pytest.raises(EmptyMask):
        geometry.build_mask(poly, seg)


def test_build_mask_subset_of_segment():
    rng = np.random.default_rng(9)
    seg = rng.uniform(size=(80, 80)) > 0.3
    poly = np.array([(10.0, 15.0), (60.0, 20.0), (55.0, 70.0), (12.0, 60.0)])
    mask = geometry.build_mask(poly, seg)
    assert not np.any(mask.raster & ~seg)


def test_composite_identity_and_masks():
    rng = np.random.default_rng(1)
    original = rng.uniform(size=(40, 40))
    generated = rng.uniform(size=(40, 40))
    seg = rng.uniform(size=(40, 40)) > 0.5
    assert np.array_equal(geometry.composite_back(original, original, seg), original)
    assert np.array_equal(
        geometry.composite_back(original, generated, np.zeros_like(seg)), original
    )
    assert np.array_equal(
        geometry.composite_back(original, generated, np.ones_like(seg)), generated
    )
    out = geometry.composite_back(original, generated, seg)
    assert np.array_equal(out[~seg], original[~seg])


def test_composite_size_mismatch():
    with pytest.raises(SizeMismatch):
        geometry.composite_back(np.zeros((4, 4)), np.zeros((5, 5)), np.zeros((4, 4), bool))


# synthetic-hand derived properties ------------------------------------------

def test_synthetic_hull_area_ratio_within_bounds():
    rng = np.random.default_rng(21)
    for trial in range(10):
        ident = synth.sample_identity(trial * 13 + 1)
        jit = synth.Jitter(
            dx=float(rng.uniform(-4, 4)),
            dy=float(rng.uniform(-4, 4)),
            rotation=float(rng.uniform(-0.007, 0.03)),
            gain=float(rng.uniform(0.9, 1.1)),
        )
        sample = synth.render_hand(ident, session=1, jitter=jit)
        oracle_hull = gift_wrap_hull(sample.keypoints.palm_points())
        full = geometry.full_roi_square(sample.keypoints)
        ratio = shoelace(oracle_hull) / full.side**2
        assert 0.15 <= ratio <= 0.6


def test_synthetic_full_roi_side_matches_palm_span():
    sample = synth.render_hand(synth.sample_identity(3), session=0)
    full = geometry.full_roi_square(sample.keypoints)
    assert abs(full.side - synth.DEFAULT_PALM_SPAN) <= 1


def test_synthetic_mask_coverage_within_bounds():
    sample = synth.render_hand(synth.sample_identity(8), session=0)
    poly = geometry.palm_polygon(sample.keypoints)
    mask = geometry.build_mask(poly, sample.seg)
    assert 0.05 <= mask.coverage <= 0.5
