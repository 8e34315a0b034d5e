import numpy as np
import pytest

from palmdeid import matcher, synth
from palmdeid.exceptions import ConfigInvalid


def test_sample_identity_deterministic():
    a = synth.sample_identity(123)
    b = synth.sample_identity(123)
    assert a == b


def test_sample_identity_ranges():
    for seed in (0, 1, 42, 10**9):
        ident = synth.sample_identity(seed)
        assert 3 <= len(ident.line_params) <= 8
        assert 0.05 <= ident.ridge_freq <= 0.25
        for line in ident.line_params:
            assert 0.0 < line.depth <= 1.0
            assert line.width > 0


def test_sample_identity_distinct_across_seeds():
    collisions = 0
    for seed in range(100):
        a = synth.sample_identity(seed)
        b = synth.sample_identity(seed + 1000)
        if a.line_params == b.line_params:
            collisions += 1
    assert collisions == 0


def test_render_deterministic():
    ident = synth.sample_identity(7)
    a = synth.render_hand(ident, session=2)
    b = synth.render_hand(ident, session=2)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.seg, b.seg)
    assert np.array_equal(a.keypoints.points, b.keypoints.points)


def test_render_jitter_bounds_enforced():
    ident = synth.sample_identity(7)
    with pytest.raises(ConfigInvalid):
        synth.render_hand(ident, jitter=synth.Jitter(dx=9.0))
    with pytest.raises(ConfigInvalid):
        synth.render_hand(ident, jitter=synth.Jitter(rotation=0.2))
    with pytest.raises(ConfigInvalid):
        synth.render_hand(ident, jitter=synth.Jitter(gain=1.5))


def test_keypoints_inside_segmentation():
    rng = np.random.default_rng(5)
    for trial in range(8):
        ident = synth.sample_identity(trial)
        jit = synth.Jitter(
            dx=float(rng.uniform(-4, 4)),
            dy=float(rng.uniform(-4, 4)),
            rotation=float(rng.uniform(-0.05, 0.05)),
            gain=float(rng.uniform(0.9, 1.1)),
        )
        sample = synth.render_hand(ident, session=1, jitter=jit)
        for x, y in np.rint(sample.keypoints.points).astype(int):
            assert sample.seg[y, x]


def test_gain_scales_palm_interior():
    ident = synth.sample_identity(11)
    base = synth.render_hand(ident, session=0, jitter=synth.Jitter(gain=1.0))
    lit = synth.render_hand(ident, session=0, jitter=synth.Jitter(gain=1.1))
    # same session => same noise realization; compare well-lit palm pixels
    interior = base.seg & (base.image > 0.3) & (lit.image < 0.99)
    ratio = np.median(lit.image[interior] / base.image[interior])
    assert ratio == pytest.approx(1.1, abs=0.02)


def test_genuine_below_imposter_mean():
    gallery = []
    for i in range(6):
        ident = synth.sample_identity(i * 17 + 5)
        for s in range(2):
            jrng = np.random.default_rng(np.random.SeedSequence([3, i, s]))
            jit = synth.Jitter(
                dx=float(jrng.uniform(-4, 4)),
                dy=float(jrng.uniform(-4, 4)),
                rotation=float(jrng.uniform(-0.007, 0.03)),
                gain=float(jrng.uniform(0.9, 1.1)),
            )
            r = synth.render_hand(ident, s, jit)
            gallery.append(synth.HandSample(r.image, r.keypoints, r.seg, i, s))
    pools = matcher.score_pools(gallery)
    assert pools["genuine"].mu < pools["imposter"].mu


def test_make_dataset_counts_and_determinism(tmp_path):
    m1 = synth.make_dataset(3, 2, rng_seed=9, out_dir=tmp_path / "a")
    m2 = synth.make_dataset(3, 2, rng_seed=9, out_dir=tmp_path / "b")
    assert m1.read_bytes() == m2.read_bytes()
    samples = synth.load_manifest(m1)
    assert len(samples) == 6
    img1 = (tmp_path / "a/images/id000_s0.png").read_bytes()
    img2 = (tmp_path / "b/images/id000_s0.png").read_bytes()
    assert img1 == img2


def test_make_dataset_rejects_tiny_configs(tmp_path):
    with pytest.raises(ConfigInvalid):
        synth.make_dataset(1, 2, rng_seed=1, out_dir=tmp_path)
    with pytest.raises(ConfigInvalid):
        synth.make_dataset(2, 1, rng_seed=1, out_dir=tmp_path)


def test_manifest_roundtrip_preserves_ground_truth(tmp_path):
    manifest = synth.make_dataset(2, 2, rng_seed=4, out_dir=tmp_path)
    samples = synth.load_manifest(manifest)
    assert {(s.identity, s.session) for s in samples} == {
        (0, 0), (0, 1), (1, 0), (1, 1)
    }
    for s in samples:
        assert s.image.shape == s.seg.shape
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
