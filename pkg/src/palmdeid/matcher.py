"""Competitive-code palmprint matcher.

Orientation coding: a bank of even-symmetric, zero-mean Gabor kernels;
per cell the most negative summed response wins (palm lines are darker
than skin). Codes are compared by circular index distance, minimized
over small integer shifts.

The recognition ROI is the medium (palm-center) square: it sits strictly
inside the palm mask, which keeps evaluation of masked/regenerated palms
honest (no unmodified border ring leaks identity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .exceptions import EmptyGallery, InsufficientData, NoOverlap, ShapeMismatch
from .geometry import HandKeypoints, extract_roi_image, full_roi_square, scaled_roi
from .metrics import ScoreSet


@dataclass(frozen=True)
class MatcherConfig:
    n_orientations: int = 6
    wavelength: float = 12.0
    sigma: float = 5.6
    kernel_size: int = 35
    stride: int = 4
    shift_radius: int = 3
    # Cells whose kernel support touches the ROI border are edge-
    # contaminated; with a 35px kernel and stride 4 that is 5 cells.
    border_cells: int = 5
    energy_eps: float = 1e-6
    roi_scale: float = 0.5
    max_imposter_pairs: int = 50000
    subsample_seed: int = 7


@dataclass(frozen=True)
class CompetitiveCode:
    orientation_index: np.ndarray  # int8 grid
    validity: np.ndarray           # bool grid, same shape


@dataclass(frozen=True)
class MatchScore:
    distance: float
    aligned_shift: tuple


@lru_cache(maxsize=8)
def _kernels(n_orientations: int, wavelength: float, sigma: float, size: int) -> np.ndarray:
    """Even Gabor bank; kernel k responds to stripes along angle k*pi/n."""
    half = size // 2
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    envelope = np.exp(-(xs**2 + ys**2) / (2.0 * sigma**2))
    bank = []
    for k in range(n_orientations):
        theta = k * math.pi / n_orientations
        u = -xs * math.sin(theta) + ys * math.cos(theta)
        g = envelope * np.cos(2.0 * math.pi * u / wavelength)
        g -= g.mean()
        g /= np.sqrt(np.sum(g * g))
        bank.append(g)
    return np.stack(bank)


def encode(roi: np.ndarray, cfg: MatcherConfig = MatcherConfig()) -> CompetitiveCode:
    """Orientation-code a [0, 1] ROI; constant input yields an all-invalid code."""
    roi = np.asarray(roi, dtype=np.float64)
    h, w = roi.shape
    if h % cfg.stride or w % cfg.stride:
        raise ShapeMismatch(f"ROI sides must be multiples of stride {cfg.stride}")
    pad = cfg.kernel_size // 2
    padded = np.pad(roi, pad, mode="reflect")
    bank = _kernels(cfg.n_orientations, cfg.wavelength, cfg.sigma, cfg.kernel_size)
    gh, gw = h // cfg.stride, w // cfg.stride
    cells = np.empty((cfg.n_orientations, gh, gw))
    for k in range(cfg.n_orientations):
        resp = fftconvolve(padded, bank[k], mode="valid")
        cells[k] = resp.reshape(gh, cfg.stride, gw, cfg.stride).sum(axis=(1, 3))
    winner = np.argmin(cells, axis=0).astype(np.int8)  # ties go to the lower index
    validity = np.max(np.abs(cells), axis=0) > cfg.energy_eps
    b = cfg.border_cells
    if b > 0:
        validity[:b, :] = False
        validity[-b:, :] = False
        validity[:, :b] = False
        validity[:, -b:] = False
    return CompetitiveCode(orientation_index=winner, validity=validity)


def _shifts_in_order(radius: int):
    shifts = [(dx, dy) for dx in range(-radius, radius + 1) for dy in range(-radius, radius + 1)]
    shifts.sort(key=lambda s: (abs(s[0]) + abs(s[1]), s))
    return shifts


def _shift_slices(shape: tuple, dx: int, dy: int):
    h, w = shape
    ay = slice(max(0, dy), h + min(0, dy))
    ax = slice(max(0, dx), w + min(0, dx))
    by = slice(max(0, -dy), h + min(0, -dy))
    bx = slice(max(0, -dx), w + min(0, -dx))
    return (ay, ax), (by, bx)


def _one_to_many(
    probe: CompetitiveCode,
    gallery_idx: np.ndarray,
    gallery_valid: np.ndarray,
    cfg: MatcherConfig,
    want_shifts: bool = False,
):
    """Minimum shifted distance from one code to a stacked gallery.

    Ties resolve to the smallest |dx|+|dy| then lexicographic shift, by
    evaluating shifts in that order with strict improvement.
    """
    shape = probe.orientation_index.shape
    if gallery_idx.shape[1:] != shape:
        raise ShapeMismatch("code grids have different shapes")
    half = cfg.n_orientations // 2
    m = gallery_idx.shape[0]
    best = np.full(m, np.inf)
    best_shift = [None] * m
    a_idx = probe.orientation_index.astype(np.int16)
    a_val = probe.validity
    g_idx = gallery_idx.astype(np.int16)
    for dx, dy in _shifts_in_order(cfg.shift_radius):
        (ay, ax), (by, bx) = _shift_slices(shape, dx, dy)
        ia = a_idx[ay, ax]
        va = a_val[ay, ax]
        ib = g_idx[:, by, bx]
        vb = gallery_valid[:, by, bx]
        diff = np.abs(ia[None, :, :] - ib)
        diff = np.minimum(diff, cfg.n_orientations - diff)
        both = va[None, :, :] & vb
        counts = both.sum(axis=(1, 2))
        sums = np.where(both, diff, 0).sum(axis=(1, 2))
        with np.errstate(invalid="ignore", divide="ignore"):
            dist = np.where(counts > 0, sums / (counts * half), np.inf)
        improved = dist < best
        best = np.where(improved, dist, best)
        if want_shifts:
            for j in np.nonzero(improved)[0]:
                best_shift[j] = (dx, dy)
    return best, best_shift


def match(a: CompetitiveCode, b: CompetitiveCode, cfg: MatcherConfig = MatcherConfig()) -> MatchScore:
    """Shift-minimized circular orientation distance between two codes."""
    if a.orientation_index.shape != b.orientation_index.shape:
        raise ShapeMismatch("code grids have different shapes")
    dists, shifts = _one_to_many(
        a, b.orientation_index[None], b.validity[None], cfg, want_shifts=True
    )
    if not np.isfinite(dists[0]):
        raise NoOverlap("no shift yields mutually valid cells")
    return MatchScore(distance=float(dists[0]), aligned_shift=shifts[0])


def distance_matrix(
    probes: list,
    gallery: list,
    cfg: MatcherConfig = MatcherConfig(),
    on_no_overlap: str = "raise",
) -> np.ndarray:
    """Pairwise minimum distances; rows = probes, cols = gallery."""
    g_idx = np.stack([c.orientation_index for c in gallery])
    g_val = np.stack([c.validity for c in gallery])
    out = np.empty((len(probes), len(gallery)))
    for i, probe in enumerate(probes):
        dists, _ = _one_to_many(probe, g_idx, g_val, cfg)
        out[i] = dists
    if not np.all(np.isfinite(out)):
        if on_no_overlap == "max":
            out = np.where(np.isfinite(out), out, 1.0)
        else:
            raise NoOverlap("some pairs have no mutually valid cells")
    return out


def recognition_roi(
    image: np.ndarray, keypoints: HandKeypoints, cfg: MatcherConfig = MatcherConfig()
) -> np.ndarray:
    """Extract the matcher's palm-center ROI (128x128) from a hand image."""
    full = full_roi_square(keypoints)
    return extract_roi_image(image, scaled_roi(full, cfg.roi_scale))


def encode_samples(samples: list, cfg: MatcherConfig = MatcherConfig()) -> list:
    return [encode(recognition_roi(s.image, s.keypoints, cfg), cfg) for s in samples]


def score_pools(samples: list, cfg: MatcherConfig = MatcherConfig()) -> dict:
    """Genuine (intra-identity cross-session) and imposter distance pools."""
    identities = {s.identity for s in samples}
    sessions = {s.session for s in samples}
    if len(identities) < 2 or len(sessions) < 2:
        raise InsufficientData("need >= 2 identities and >= 2 sessions")
    codes = encode_samples(samples, cfg)
    n = len(samples)
    genuine_pairs = []
    imposter_pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if samples[i].identity == samples[j].identity:
                if samples[i].session != samples[j].session:
                    genuine_pairs.append((i, j))
            else:
                imposter_pairs.append((i, j))
    if len(imposter_pairs) > cfg.max_imposter_pairs:
        rng = np.random.default_rng(cfg.subsample_seed)
        keep = rng.choice(len(imposter_pairs), size=cfg.max_imposter_pairs, replace=False)
        imposter_pairs = [imposter_pairs[k] for k in np.sort(keep)]

    def pair_distances(pairs):
        by_probe = {}
        for i, j in pairs:
            by_probe.setdefault(i, []).append(j)
        dists = {}
        for i, js in by_probe.items():
            g_idx = np.stack([codes[j].orientation_index for j in js])
            g_val = np.stack([codes[j].validity for j in js])
            d, _ = _one_to_many(codes[i], g_idx, g_val, cfg)
            if not np.all(np.isfinite(d)):
                raise NoOverlap("pool pair has no mutually valid cells")
            for j, dist in zip(js, d):
                dists[(i, j)] = dist
        return np.array([dists[p] for p in pairs])

    return {
        "genuine": ScoreSet("genuine", pair_distances(genuine_pairs)),
        "imposter": ScoreSet("imposter", pair_distances(imposter_pairs)),
    }


def rank1_accuracy(
    gallery_codes: list,
    gallery_labels: list,
    probe_codes: list,
    probe_labels: list,
    cfg: MatcherConfig = MatcherConfig(),
) -> float:
    """Percent of probes whose nearest gallery sample shares their label."""
    if not gallery_codes:
        raise EmptyGallery("gallery is empty")
    gallery_set = set(gallery_labels)
    for label in probe_labels:
        if label not in gallery_set:
            raise EmptyGallery(f"probe label {label!r} has no gallery enrollee")
    dists = distance_matrix(probe_codes, gallery_codes, cfg, on_no_overlap="max")
    nearest = np.argmin(dists, axis=1)
    labels = np.asarray(gallery_labels)
    correct = labels[nearest] == np.asarray(probe_labels)
    return float(100.0 * np.mean(correct))
