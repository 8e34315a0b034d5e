"""Evaluation metrics: decidability, de-identification ratio, EER, RR,
image quality (SSIM / MS-SSIM / PSNR) and the seed-diversity analysis.

Distribution statistics use the population (1/n) standard deviation; the
convention is recorded in every report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import (
    DegenerateDistribution,
    DegenerateReference,
    InsufficientData,
    ShapeMismatch,
    TooSmall,
)

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class ScoreSet:
    """Matching-distance samples for one population.

    mu/sigma are always recomputed from the samples.
    """

    population: str
    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64).ravel()
        object.__setattr__(self, "samples", arr)

    @property
    def mu(self) -> float:
        if self.samples.size == 0:
            raise InsufficientData(f"no samples in population '{self.population}'")
        return float(np.mean(self.samples))

    @property
    def sigma(self) -> float:
        if self.samples.size == 0:
            raise InsufficientData(f"no samples in population '{self.population}'")
        return float(np.std(self.samples))


@dataclass(frozen=True)
class DirReport:
    dir_percent: float
    d_prime_gd: float
    d_prime_gi: float
    band: str
    rr_percent: float
    eer_percent: float
    threshold: float
    accuracy_percent: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "dir_percent": self.dir_percent,
            "d_prime_gd": self.d_prime_gd,
            "d_prime_gi": self.d_prime_gi,
            "band": self.band,
            "rr_percent": self.rr_percent,
            "eer_percent": self.eer_percent,
            "threshold": self.threshold,
            "accuracy_percent": self.accuracy_percent,
            "sigma_convention": "population",
        }
        out.update(self.extras)
        return out


def _require(score_set: ScoreSet, n: int = 2) -> None:
    if score_set.samples.size < n:
        raise InsufficientData(
            f"population '{score_set.population}' needs >= {n} samples"
        )


def decidability(a: ScoreSet, b: ScoreSet) -> float:
    """Normalized mean separation |mu1 - mu2| / sqrt((s1^2 + s2^2) / 2)."""
    _require(a)
    _require(b)
    va, vb = a.sigma**2, b.sigma**2
    if va == 0.0 and vb == 0.0:
        raise DegenerateDistribution("both distributions have zero spread")
    return abs(a.mu - b.mu) / math.sqrt((va + vb) / 2.0)


def deid_ratio(
    genuine: ScoreSet, imposter: ScoreSet, deid: ScoreSet, trim: float = 0.0
) -> float:
    """Signed de-identification ratio, in percent.

    (mu_g - mu_d) / (mu_g - mu_i) * sqrt(s_g^2 + s_i^2) / sqrt(s_g^2 + s_d^2) * 100.
    The signed form lets failed de-identification report near or below zero.
    trim optionally drops that fraction from each tail of the deid samples.
    """
    _require(genuine)
    _require(imposter)
    _require(deid)
    d_samples = deid.samples
    if trim > 0.0:
        k = int(trim * d_samples.size)
        if k > 0:
            d_samples = np.sort(d_samples)[k : d_samples.size - k]
        deid = ScoreSet(deid.population, d_samples)
        _require(deid)
    if genuine.mu == imposter.mu:
        raise DegenerateReference("genuine and imposter means coincide")
    spread = genuine.sigma**2 + deid.sigma**2
    if spread == 0.0:
        raise DegenerateDistribution("genuine and deid distributions have zero spread")
    mean_ratio = (genuine.mu - deid.mu) / (genuine.mu - imposter.mu)
    sigma_ratio = math.sqrt((genuine.sigma**2 + imposter.sigma**2) / spread)
    return 100.0 * mean_ratio * sigma_ratio


def band(dir_percent: float) -> str:
    """Qualitative suppression band for a DIR value."""
    if not math.isfinite(dir_percent):
        raise ValueError("dir_percent must be finite")
    if dir_percent > 100.0:
        return "over"
    if dir_percent > 80.0:
        return "high"
    if dir_percent >= 60.0:
        return "moderate"
    return "limited"


def eer(genuine: ScoreSet, imposter: ScoreSet) -> tuple:
    """(threshold, eer_percent) at the |FAR - FRR| minimizing midpoint.

    Candidate thresholds are midpoints of consecutive merged sorted
    distances; ties resolve to the lower threshold.
    """
    _require(genuine, 1)
    _require(imposter, 1)
    g = np.sort(genuine.samples)
    i = np.sort(imposter.samples)
    merged = np.sort(np.concatenate([g, i]))
    mids = np.unique((merged[:-1] + merged[1:]) / 2.0)
    if mids.size == 0:
        mids = merged[:1]
    far = np.searchsorted(i, mids, side="right") / i.size
    frr = 1.0 - np.searchsorted(g, mids, side="right") / g.size
    gap = np.abs(far - frr)
    best = int(np.argmin(gap))  # argmin takes the first (lowest) threshold
    return float(mids[best]), float(100.0 * (far[best] + frr[best]) / 2.0)


def rejection_rate(deid: ScoreSet, threshold: float) -> float:
    """Percent of de-identified match distances exceeding the threshold."""
    _require(deid, 1)
    return float(100.0 * np.mean(deid.samples > threshold))


def _gaussian_window(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _local_stats(x: np.ndarray, y: np.ndarray, win: np.ndarray):
    pad = win.shape[0] // 2
    sl = (slice(pad, -pad), slice(pad, -pad))
    mx = ndimage.correlate(x, win, mode="constant")[sl]
    my = ndimage.correlate(y, win, mode="constant")[sl]
    mxx = ndimage.correlate(x * x, win, mode="constant")[sl]
    myy = ndimage.correlate(y * y, win, mode="constant")[sl]
    mxy = ndimage.correlate(x * y, win, mode="constant")[sl]
    return mx, my, mxx - mx * mx, myy - my * my, mxy - mx * my


def _ssim_cs_maps(x: np.ndarray, y: np.ndarray):
    if x.shape != y.shape:
        raise ShapeMismatch(f"shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < _SSIM_WINDOW:
        raise TooSmall(f"image smaller than the {_SSIM_WINDOW}px SSIM window")
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2
    mx, my, vx, vy, cxy = _local_stats(
        np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64), _gaussian_window()
    )
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2.0 * cxy + c2) / (vx + vy + c2)
    return lum * cs, cs


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Structural similarity, 11x11 Gaussian window, unit dynamic range."""
    ssim_map, _ = _ssim_cs_maps(x, y)
    return float(ssim_map.mean())


def feasible_ms_ssim_scales(min_side: int) -> int:
    """Largest scale count whose coarsest level still fits the SSIM window."""
    scales = 0
    side = min_side
    while side >= _SSIM_WINDOW and scales < len(MS_SSIM_WEIGHTS):
        scales += 1
        side //= 2
    return scales


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2])


def ms_ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Multi-scale SSIM; falls back to fewer scales (renormalized weights)
    when the image is too small for all five."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"shapes differ: {x.shape} vs {y.shape}")
    scales = feasible_ms_ssim_scales(min(x.shape))
    if scales < 1:
        raise TooSmall(f"image smaller than the {_SSIM_WINDOW}px SSIM window")
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales], dtype=np.float64)
    weights = weights / weights.sum()
    cx, cy = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    value = 1.0
    for level in range(scales):
        ssim_map, cs_map = _ssim_cs_maps(cx, cy)
        term = ssim_map.mean() if level == scales - 1 else cs_map.mean()
        value *= max(float(term), 0.0) ** weights[level]
        if level < scales - 1:
            cx, cy = _downsample2(cx), _downsample2(cy)
    return float(value)


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images; inf if equal."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def diversity_report(per_seed_rois: list, matcher_config=None) -> ScoreSet:
    """Pairwise matcher distances among de-identified versions of each source.

    per_seed_rois: one list of 128x128 rasters per source image.
    """
    from . import matcher  # local import; matcher depends on this module

    cfg = matcher_config if matcher_config is not None else matcher.MatcherConfig()
    distances = []
    for rois in per_seed_rois:
        if len(rois) < 2:
            raise InsufficientData("diversity needs >= 2 seeds per source image")
        codes = [matcher.encode(roi, cfg) for roi in rois]
        for a in range(len(codes)):
            for b in range(a + 1, len(codes)):
                distances.append(matcher.match(codes[a], codes[b], cfg).distance)
    return ScoreSet("diversity", np.asarray(distances, dtype=np.float64))


def evaluate_deid(
    genuine: ScoreSet,
    imposter: ScoreSet,
    deid: ScoreSet,
    accuracy_percent: float | None = None,
    extras: dict | None = None,
) -> DirReport:
    """Assemble the standard report: DIR, band, RR at the EER threshold."""
    threshold, eer_pct = eer(genuine, imposter)
    dir_pct = deid_ratio(genuine, imposter, deid)
    return DirReport(
        dir_percent=dir_pct,
        d_prime_gd=decidability(genuine, deid),
        d_prime_gi=decidability(genuine, imposter),
        band=band(dir_pct),
        rr_percent=rejection_rate(deid, threshold),
        eer_percent=eer_pct,
        threshold=threshold,
        accuracy_percent=accuracy_percent,
        extras=extras or {},
    )


def histogram_table(score_sets: list, bins: int = 64) -> list:
    """Shared-range binned counts for all populations, as CSV-ready rows."""
    all_vals = np.concatenate([s.samples for s in score_sets if s.samples.size])
    if all_vals.size == 0:
        raise InsufficientData("no samples to histogram")
    lo, hi = float(all_vals.min()), float(all_vals.max())
    if lo == hi:
        hi = lo + 1e-9
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    for s in score_sets:
        counts, _ = np.histogram(s.samples, bins=edges)
        for b in range(bins):
            rows.append((s.population, float(edges[b]), float(edges[b + 1]), int(counts[b])))
    return rows
