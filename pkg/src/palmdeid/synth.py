"""Synthetic hand/palmprint generator with analytic ground truth.

Each identity is a set of principal-line descriptors plus a curved ridge
field; intra-class variation is a small rigid jitter, an illumination
gain, and pixel noise. Keypoints and segmentation are transformed by the
same rigid motion as the rendering, so ground truth stays exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageio
from .exceptions import ConfigInvalid
from .geometry import (
    PALM_INDICES,
    HandKeypoints,
    convex_hull,
    rasterize_convex_polygon,
)

# 21-point skeleton in palm units (origin at palm center, y down).
# Order: wrist, thumb 1-4, index 5-8, middle 9-12, ring 13-16, pinky 17-20.
HAND_TEMPLATE = np.array(
    [
        (0.20, 0.50),
        (-0.50, 0.17), (-0.40, -0.12), (-0.58, -0.30), (-0.64, -0.44),
        (-0.34, -0.50), (-0.36, -0.66), (-0.37, -0.80), (-0.38, -0.92),
        (-0.10, -0.455), (-0.10, -0.66), (-0.10, -0.82), (-0.10, -0.95),
        (0.14, -0.415), (0.16, -0.62), (0.17, -0.76), (0.18, -0.88),
        (0.38, -0.30), (0.42, -0.46), (0.44, -0.58), (0.46, -0.68),
    ],
    dtype=np.float64,
)

_FINGER_BONES = (
    (1, 2), (2, 3), (3, 4),
    (5, 6), (6, 7), (7, 8),
    (9, 10), (10, 11), (11, 12),
    (13, 14), (14, 15), (15, 16),
    (17, 18), (18, 19), (19, 20),
)

IMAGE_SIZE = (256, 256)
PALM_CENTER = (128.0, 150.0)
DEFAULT_PALM_SPAN = 128.0

_BACKGROUND = 0.12
_SKIN = 0.62
_SHADING = 0.02
_RIDGE_AMP = 0.05
_NOISE_SIGMA = 0.01
_LINE_LENGTH = 0.75     # palm units
_SEG_MARGIN = 0.065     # palm units, silhouette dilation and finger radius
_TEXTURE_FEATHER = 3.0  # px fade of palm texture at the hull boundary

# Per-call jitter bounds accepted by render_hand.
JITTER_MAX_TRANSLATION = 4.0
JITTER_MAX_ROTATION = 0.05
JITTER_GAIN_RANGE = (0.9, 1.1)

# make_dataset samples rotations from a narrower band than the hard bound
# so keypoint-anchored crops stay well registered across sessions. The band
# is one-sided: tilting the other way shrinks the rounded bounding square.
_SAMPLED_ROTATION = (-0.007, 0.03)


@dataclass(frozen=True)
class LineParams:
    """One principal line: anchor (palm units), orientation, curvature, width, depth."""

    anchor: tuple
    orientation: float
    curvature: float
    width: float
    depth: float


@dataclass(frozen=True)
class IdentityParams:
    line_params: tuple
    ridge_freq: float
    ridge_phase: float
    seed: int


@dataclass(frozen=True)
class Jitter:
    dx: float = 0.0
    dy: float = 0.0
    rotation: float = 0.0
    gain: float = 1.0


@dataclass(frozen=True)
class HandSample:
    image: np.ndarray
    keypoints: HandKeypoints
    seg: np.ndarray
    identity: int
    session: int


def sample_identity(rng_seed: int) -> IdentityParams:
    """Deterministic identity parameters within invariant ranges."""
    rng = np.random.default_rng(rng_seed)
    k = int(rng.integers(3, 9))
    lines = []
    for _ in range(k):
        lines.append(
            LineParams(
                anchor=(float(rng.uniform(-0.28, 0.17)), float(rng.uniform(-0.22, 0.22))),
                orientation=float(rng.uniform(0.0, math.pi)),
                curvature=float(rng.uniform(-0.004, 0.004)),
                width=float(rng.uniform(3.0, 4.5)),
                depth=float(rng.uniform(0.20, 0.38)),
            )
        )
    return IdentityParams(
        line_params=tuple(lines),
        ridge_freq=float(rng.uniform(0.06, 0.10)),
        ridge_phase=float(rng.uniform(0.0, 2.0 * math.pi)),
        seed=int(rng_seed),
    )


def _rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def _segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each (px, py) to segment a-b."""
    ab = b - a
    denom = float(ab[0] * ab[0] + ab[1] * ab[1])
    if denom == 0.0:
        return np.hypot(px - a[0], py - a[1])
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def render_hand(
    identity: IdentityParams,
    session: int = 0,
    jitter: Jitter = Jitter(),
    palm_span: float = DEFAULT_PALM_SPAN,
    image_size: tuple = IMAGE_SIZE,
) -> HandSample:
    """Render one sample: silhouette, palm texture, keypoints, segmentation."""
    if abs(jitter.dx) > JITTER_MAX_TRANSLATION or abs(jitter.dy) > JITTER_MAX_TRANSLATION:
        raise ConfigInvalid("translation jitter exceeds configured bounds")
    if abs(jitter.rotation) > JITTER_MAX_ROTATION:
        raise ConfigInvalid("rotation jitter exceeds configured bounds")
    if not JITTER_GAIN_RANGE[0] <= jitter.gain <= JITTER_GAIN_RANGE[1]:
        raise ConfigInvalid("gain jitter exceeds configured bounds")

    h, w = image_size
    rot = _rotation_matrix(jitter.rotation)
    shift = np.array(
        [PALM_CENTER[0] + jitter.dx, PALM_CENTER[1] + jitter.dy], dtype=np.float64
    )
    points = HAND_TEMPLATE * palm_span @ rot.T + shift
    kp = HandKeypoints(points)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    # Silhouette: dilated palm hull plus finger capsules.
    hull = convex_hull(points[list(PALM_INDICES)])
    inside = rasterize_convex_polygon(hull, image_size)
    margin = _SEG_MARGIN * palm_span
    edge_dist = np.full(image_size, np.inf)
    n = len(hull)
    for i in range(n):
        d = _segment_distance(xs, ys, hull[i], hull[(i + 1) % n])
        edge_dist = np.minimum(edge_dist, d)
    seg = inside | (edge_dist <= margin)
    for i0, i1 in _FINGER_BONES:
        seg |= _segment_distance(xs, ys, points[i0], points[i1]) <= margin

    # Texture is confined to the palm hull; restrict the heavy per-pixel
    # work to the hull bounding box.
    bx0 = max(0, int(hull[:, 0].min()) - 4)
    bx1 = min(w, int(hull[:, 0].max()) + 5)
    by0 = max(0, int(hull[:, 1].min()) - 4)
    by1 = min(h, int(hull[:, 1].max()) + 5)
    win = (slice(by0, by1), slice(bx0, bx1))
    wxs, wys = xs[win], ys[win]

    # Palm-frame coordinates (pixels) for texture anchored to the hand.
    relx, rely = wxs - shift[0], wys - shift[1]
    palm_x = relx * rot[0, 0] + rely * rot[1, 0]
    palm_y = relx * rot[0, 1] + rely * rot[1, 1]

    r2 = (palm_x**2 + palm_y**2) / (palm_span**2)
    skin_local = _SKIN - _SHADING * r2

    # Texture weight fades at the hull boundary; interior only.
    signed = np.where(inside[win], edge_dist[win], 0.0)
    weight = np.clip(signed / _TEXTURE_FEATHER, 0.0, 1.0)

    # Curved ridge field; direction and bend derived from the first line.
    theta_r = identity.line_params[0].orientation + 0.5 * math.pi
    bend = max(-0.5, min(0.5, identity.line_params[0].curvature / 0.004 * 0.45))
    cr, sr = math.cos(theta_r), math.sin(theta_r)
    u = palm_x * cr + palm_y * sr
    v = -palm_x * sr + palm_y * cr
    u = u + bend * v * v / palm_span
    ridges = _RIDGE_AMP * np.sin(2.0 * math.pi * identity.ridge_freq * u + identity.ridge_phase)

    local = skin_local * (1.0 + weight * ridges)

    # Principal lines: anti-aliased Gaussian-profile strokes along arcs.
    half_len = 0.5 * _LINE_LENGTH * palm_span
    ts = np.arange(-half_len, half_len + 1.0, 2.0)
    for line in identity.line_params:
        ax, ay = line.anchor
        d_hat = np.array([math.cos(line.orientation), math.sin(line.orientation)])
        n_hat = np.array([-d_hat[1], d_hat[0]])
        curve = (
            np.array([ax, ay]) * palm_span
            + ts[:, None] * d_hat
            + 0.5 * line.curvature * (ts**2)[:, None] * n_hat
        )
        dist2 = np.full(palm_x.shape, np.inf)
        for cpt in curve:
            dx = palm_x - cpt[0]
            dy = palm_y - cpt[1]
            dist2 = np.minimum(dist2, dx * dx + dy * dy)
        sigma = 0.5 * line.width
        local = local * (1.0 - weight * line.depth * np.exp(-dist2 / (2.0 * sigma * sigma)))

    rel_full_x, rel_full_y = xs - shift[0], ys - shift[1]
    r2_full = (rel_full_x**2 + rel_full_y**2) / (palm_span**2)
    texture = _SKIN - _SHADING * r2_full
    texture[win] = local

    image = np.where(seg, texture, _BACKGROUND) * jitter.gain
    noise_rng = np.random.default_rng(np.random.SeedSequence([identity.seed, session]))
    image = image + noise_rng.normal(0.0, _NOISE_SIGMA, size=image_size)
    image = np.clip(image, 0.0, 1.0)

    return HandSample(image=image, keypoints=kp, seg=seg, identity=-1, session=session)


def make_dataset(
    n_identities: int,
    n_sessions: int,
    rng_seed: int,
    out_dir,
    palm_span: float = DEFAULT_PALM_SPAN,
) -> Path:
    """Render a dataset and write images, segmentations and a JSON manifest."""
    if n_identities < 2 or n_sessions < 2:
        raise ConfigInvalid("need at least 2 identities and 2 sessions")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "segs").mkdir(parents=True, exist_ok=True)

    seed_rng = np.random.default_rng(rng_seed)
    identity_seeds = seed_rng.integers(0, 2**63, size=n_identities)

    records = []
    for i in range(n_identities):
        identity = sample_identity(int(identity_seeds[i]))
        for s in range(n_sessions):
            jrng = np.random.default_rng(np.random.SeedSequence([rng_seed, i, s]))
            jit = Jitter(
                dx=float(jrng.uniform(-4.0, 4.0)),
                dy=float(jrng.uniform(-4.0, 4.0)),
                rotation=float(jrng.uniform(*_SAMPLED_ROTATION)),
                gain=float(jrng.uniform(0.9, 1.1)),
            )
            sample = render_hand(identity, session=s, jitter=jit, palm_span=palm_span)
            image_path = f"images/id{i:03d}_s{s}.png"
            seg_path = f"segs/id{i:03d}_s{s}.png"
            imageio.write_gray(out / image_path, sample.image)
            imageio.write_mask(out / seg_path, sample.seg)
            records.append(
                {
                    "image_path": image_path,
                    "seg_path": seg_path,
                    "identity": i,
                    "session": s,
                    "keypoints": [[float(x), float(y)] for x, y in sample.keypoints.points],
                }
            )

    manifest = out / "manifest.json"
    imageio.write_json(manifest, records)
    return manifest


def load_manifest(path) -> list:
    """Load manifest records into HandSamples (images read from PNG)."""
    path = Path(path)
    base = path.parent
    samples = []
    for rec in imageio.read_json(path):
        samples.append(
            HandSample(
                image=imageio.read_gray(base / rec["image_path"]),
                keypoints=HandKeypoints(np.asarray(rec["keypoints"], dtype=np.float64)),
                seg=imageio.read_mask(base / rec["seg_path"]),
                identity=int(rec["identity"]),
                session=int(rec["session"]),
            )
        )
    return samples
