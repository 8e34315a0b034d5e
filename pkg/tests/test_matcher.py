import math

import numpy as np
import pytest

from palmdeid import matcher, synth
from palmdeid.exceptions import EmptyGallery, InsufficientData, NoOverlap, ShapeMismatch


def line_roi(angle, background=0.7, depth=0.5, width=3.0):
    """128x128 image with a single dark straight line through the center."""
    ys, xs = np.mgrid[0:128, 0:128].astype(np.float64)
    cx = cy = 63.5
    # signed distance to the line through the center at the given angle
    d = -(xs - cx) * math.sin(angle) + (ys - cy) * math.cos(angle)
    return background * (1.0 - depth * np.exp(-(d**2) / (2.0 * width**2)))


def full_code(indices, shape=(32, 32)):
    grid = np.full(shape, indices, dtype=np.int8)
    return matcher.CompetitiveCode(grid, np.ones(shape, bool))


def test_line_encodes_matching_orientation():
    angle = math.pi / 6
    code = matcher.encode(line_roi(angle))
    ys, xs = np.mgrid[0:32, 0:32].astype(np.float64)
    centers_x = xs * 4 + 1.5
    centers_y = ys * 4 + 1.5
    d = -(centers_x - 63.5) * math.sin(angle) + (centers_y - 63.5) * math.cos(angle)
    on_line = (np.abs(d) < 2.0) & code.validity
    assert on_line.sum() > 10
    hits = np.mean(code.orientation_index[on_line] == 1)
    assert hits >= 0.8


def test_constant_image_all_invalid():
    code = matcher.encode(np.full((128, 128), 0.5))
    assert not code.validity.any()


def test_encode_deterministic():
    rng = np.random.default_rng(0)
    roi = rng.uniform(0, 1, size=(128, 128))
    a = matcher.encode(roi)
    b = matcher.encode(roi)
    assert np.array_equal(a.orientation_index, b.orientation_index)
    assert np.array_equal(a.validity, b.validity)


def test_match_identity_zero_at_origin():
    code = matcher.encode(line_roi(0.4))
    score = matcher.match(code, code)
    assert score.distance == 0.0
    assert score.aligned_shift == (0, 0)


def test_match_opposite_orientations_maximal():
    a = full_code(0)
    b = full_code(3)
    assert matcher.match(a, b).distance == 1.0


def test_match_symmetric_and_in_range():
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = matcher.CompetitiveCode(
            rng.integers(0, 6, size=(32, 32)).astype(np.int8),
            rng.uniform(size=(32, 32)) > 0.2,
        )
        b = matcher.CompetitiveCode(
            rng.integers(0, 6, size=(32, 32)).astype(np.int8),
            rng.uniform(size=(32, 32)) > 0.2,
        )
        d_ab = matcher.match(a, b).distance
        d_ba = matcher.match(b, a).distance
        assert d_ab == pytest.approx(d_ba, abs=1e-12)
        assert 0.0 <= d_ab <= 1.0


def test_shift_invariance_small_translation():
    sample = synth.render_hand(synth.sample_identity(31), session=0)
    roi = matcher.recognition_roi(sample.image, sample.keypoints)
    shifted = np.roll(roi, 2, axis=1)
    d = matcher.match(matcher.encode(roi), matcher.encode(shifted)).distance
    assert d < 0.05


def test_match_shape_mismatch():
    a = full_code(0, shape=(32, 32))
    b = full_code(0, shape=(16, 16))
    with pytest.raises(ShapeMismatch):
        matcher.match(a, b)


def test_match_no_overlap():
    idx = np.zeros((32, 32), np.int8)
    va = np.zeros((32, 32), bool)
    va[:10] = True
    vb = np.zeros((32, 32), bool)
    vb[-10:] = True
    with pytest.raises(NoOverlap):
        matcher.match(
            matcher.CompetitiveCode(idx, va), matcher.CompetitiveCode(idx, vb)
        )


def _mini_bench(n_id, n_sess, seed=3):
    samples = []
    for i in range(n_id):
        ident = synth.sample_identity(i * 29 + seed)
        for s in range(n_sess):
            jrng = np.random.default_rng(np.random.SeedSequence([seed, i, s]))
            jit = synth.Jitter(
                dx=float(jrng.uniform(-4, 4)),
                dy=float(jrng.uniform(-4, 4)),
                rotation=float(jrng.uniform(-0.007, 0.03)),
                gain=float(jrng.uniform(0.9, 1.1)),
            )
            r = synth.render_hand(ident, s, jit)
            samples.append(synth.HandSample(r.image, r.keypoints, r.seg, i, s))
    return samples


def test_score_pools_pair_counts():
    samples = _mini_bench(2, 2)
    pools = matcher.score_pools(samples)
    assert pools["genuine"].samples.size == 2
    assert pools["imposter"].samples.size == 4


def test_score_pools_requires_multiple_identities():
    samples = _mini_bench(2, 2)
    with pytest.raises(InsufficientData):
        matcher.score_pools([s for s in samples if s.identity == 0])


def test_score_pools_subsampling_deterministic():
    samples = _mini_bench(4, 2)
    cfg = matcher.MatcherConfig(max_imposter_pairs=10)
    a = matcher.score_pools(samples, cfg)
    b = matcher.score_pools(samples, cfg)
    assert a["imposter"].samples.size == 10
    assert np.array_equal(a["imposter"].samples, b["imposter"].samples)


def test_rank1_identical_probes():
    samples = _mini_bench(3, 2)
    codes = matcher.encode_samples(samples)
    labels = [s.identity for s in samples]
    assert matcher.rank1_accuracy(codes, labels, codes, labels) == 100.0


def test_rank1_missing_label_raises():
    samples = _mini_bench(3, 2)
    codes = matcher.encode_samples(samples)
    labels = [s.identity for s in samples]
    with pytest.raises(EmptyGallery):
        matcher.rank1_accuracy(codes, labels, codes[:1], [99])


def test_distance_matrix_agrees_with_match():
    samples = _mini_bench(3, 2)
    codes = matcher.encode_samples(samples)
    matrix = matcher.distance_matrix(codes[:3], codes[3:])
    for i in range(3):
        for j in range(3):
            assert matrix[i, j] == pytest.approx(
                matcher.match(codes[i], codes[3 + j]).distance, abs=1e-12
            )


def test_noise_monotonically_degrades_genuine_distance():
    rng = np.random.default_rng(17)
    pairs = []
    for i in range(100):
        ident = synth.sample_identity(i * 7 + 2)
        a = synth.render_hand(ident, session=0)
        b = synth.render_hand(
            ident,
            session=1,
            jitter=synth.Jitter(dx=1.5, dy=-1.0, rotation=0.01, gain=1.0),
        )
        pairs.append(
            (
                matcher.recognition_roi(a.image, a.keypoints),
                matcher.recognition_roi(b.image, b.keypoints),
            )
        )
    means = []
    for sigma in (0.0, 0.02, 0.05):
        dists = []
        for k, (ra, rb) in enumerate(pairs):
            noisy_a = np.clip(ra + rng.normal(0, sigma, ra.shape), 0, 1)
            noisy_b = np.clip(rb + rng.normal(0, sigma, rb.shape), 0, 1)
            dists.append(
                matcher.match(matcher.encode(noisy_a), matcher.encode(noisy_b)).distance
            )
        means.append(float(np.mean(dists)))
    assert means[1] >= means[0] - 0.005
    assert means[2] >= means[1] - 0.005
