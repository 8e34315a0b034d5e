"""Palm geometry: keypoint hull, ROI squares, mask building, compositing.

Coordinates are (x, y) pixels with pixel centers on integer coordinates,
so pixel (ix, iy) covers [ix - 0.5, ix + 0.5] x [iy - 0.5, iy + 0.5].
All operations are pure functions of their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DegenerateKeypoints,
    EmptyIntersection,
    EmptyMask,
    SizeMismatch,
)

# Indices of the palm-defining keypoints in the 21-point hand skeleton:
# wrist, thumb CMC, thumb MCP, and the four finger MCP joints.
PALM_INDICES = (0, 1, 2, 5, 9, 13, 17)

ROI_SIZE = 128
MIN_SIDE = 4


@dataclass(frozen=True)
class HandKeypoints:
    """Ordered 21-point hand skeleton, (x, y) pixel coordinates."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (21, 2):
            raise DegenerateKeypoints(f"expected 21 (x, y) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DegenerateKeypoints("keypoints contain non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def palm_points(self) -> np.ndarray:
        return self.points[list(PALM_INDICES)]


@dataclass(frozen=True)
class RoiSquare:
    """Axis-aligned square crop region."""

    center: tuple
    side: int
    scale_tag: str


@dataclass(frozen=True)
class PalmMask:
    """Binary palm-region raster plus its area fraction."""

    raster: np.ndarray
    coverage: float


@dataclass(frozen=True)
class RoiSet:
    """The three exemplar squares and their resampled images."""

    squares: dict
    images: dict


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, vertices in counter-clockwise order.

    Counter-clockwise means positive shoelace signed area in the raw
    coordinate values. Collinear points on the boundary are dropped.
    """
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 3:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1], dtype=np.float64)


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise vertices)."""
    v = np.asarray(vertices, dtype=np.float64)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def palm_polygon(kp: HandKeypoints) -> np.ndarray:
    """Convex hull of the seven palm keypoints, CCW, as an (N, 2) array."""
    hull = convex_hull(kp.palm_points())
    if len(hull) < 3 or polygon_area(hull) <= 0.0:
        raise DegenerateKeypoints("palm keypoints are collinear or coincident")
    return hull


def full_roi_square(kp: HandKeypoints) -> RoiSquare:
    """Minimum bounding square of the seven palm keypoints."""
    pts = kp.palm_points()
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if extent == 0.0:
        raise DegenerateKeypoints("palm keypoints coincide; zero-size bounding square")
    center = ((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0)
    side = max(MIN_SIDE, _round_half_up(extent))
    return RoiSquare(center=center, side=side, scale_tag="full")


def scaled_roi(full: RoiSquare, factor: float) -> RoiSquare:
    """Same-center square with side = round(factor * side), floored at 4 px."""
    if not 0.0 < factor <= 1.0:
        raise ValueError(f"scale factor must be in (0, 1], got {factor}")
    side = max(MIN_SIDE, _round_half_up(factor * full.side))
    if factor >= 0.75:
        tag = "full"
    elif factor >= 0.3:
        tag = "medium"
    else:
        tag = "small"
    return RoiSquare(center=full.center, side=side, scale_tag=tag)


def _bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample at float coordinates with edge replication (clamped gather)."""
    h, w = image.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = image[y0, x0] * (1.0 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1.0 - fx) + image[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _square_grid(square: RoiSquare, n: int):
    cx, cy = square.center
    s = float(square.side)
    offs = (np.arange(n) + 0.5) * (s / n)
    xs = (cx - s / 2.0) + offs
    ys = (cy - s / 2.0) + offs
    return np.meshgrid(xs, ys)


def extract_roi_image(image: np.ndarray, square: RoiSquare, size: int = ROI_SIZE) -> np.ndarray:
    """Crop a square (edge-replicating outside pixels) and resample to size x size.

    When the square is pixel-aligned with side == size the sampling grid
    hits input pixel centers exactly and the crop is bit-identical.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    cx, cy = square.center
    half = square.side / 2.0
    if cx + half < -0.5 or cx - half > w - 0.5 or cy + half < -0.5 or cy - half > h - 0.5:
        raise EmptyIntersection("crop square lies fully outside the image")
    gx, gy = _square_grid(square, size)
    return _bilinear_sample(image, gx, gy)


def rasterize_convex_polygon(vertices: np.ndarray, shape: tuple) -> np.ndarray:
    """Pixel centers inside or on a CCW convex polygon."""
    v = np.asarray(vertices, dtype=np.float64)
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    inside = np.ones(shape, dtype=bool)
    n = len(v)
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
        inside &= cross >= 0.0
    return inside


def build_mask(polygon: np.ndarray, seg: np.ndarray) -> PalmMask:
    """Rasterized polygon interior intersected with the hand segment."""
    seg = np.asarray(seg, dtype=bool)
    raster = rasterize_convex_polygon(polygon, seg.shape) & seg
    coverage = float(raster.mean())
    if coverage == 0.0:
        raise EmptyMask("polygon does not overlap the hand segment")
    return PalmMask(raster=raster, coverage=coverage)


def composite_back(original: np.ndarray, generated: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """Generated pixels inside the hand segment, original pixels elsewhere."""
    original = np.asarray(original)
    generated = np.asarray(generated)
    seg = np.asarray(seg, dtype=bool)
    if original.shape != generated.shape or original.shape != seg.shape:
        raise SizeMismatch(
            f"shapes differ: {original.shape} vs {generated.shape} vs {seg.shape}"
        )
    return np.where(seg, generated, original)


def extract_roi_set(image: np.ndarray, kp: HandKeypoints) -> RoiSet:
    """The full/medium/small exemplar squares and their 128x128 images."""
    full = full_roi_square(kp)
    squares = {
        "f": full,
        "m": scaled_roi(full, 0.5),
        "s": scaled_roi(full, 0.1),
    }
    images = {tag: extract_roi_image(image, sq) for tag, sq in squares.items()}
    return RoiSet(squares=squares, images=images)


def resample(image: np.ndarray, out_shape: tuple) -> np.ndarray:
    """Bilinear resize with the same half-pixel convention as ROI crops."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    oh, ow = out_shape
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return _bilinear_sample(image, gx, gy)


def write_back_roi(image: np.ndarray, square: RoiSquare, crop: np.ndarray) -> np.ndarray:
    """Resample a crop to the square's footprint and paste it into the image."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    cx, cy = square.center
    half = square.side / 2.0
    x0 = max(0, int(math.ceil(cx - half)))
    x1 = min(w - 1, int(math.ceil(cx + half)) - 1)
    y0 = max(0, int(math.ceil(cy - half)))
    y1 = min(h - 1, int(math.ceil(cy + half)) - 1)
    if x1 < x0 or y1 < y0:
        raise EmptyIntersection("crop square lies fully outside the image")
    n = crop.shape[0]
    xs = (np.arange(x0, x1 + 1) - (cx - half)) * (n / square.side) - 0.5
    ys = (np.arange(y0, y1 + 1) - (cy - half)) * (n / square.side) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    out = image.copy()
    out[y0 : y1 + 1, x0 : x1 + 1] = _bilinear_sample(np.asarray(crop, dtype=np.float64), gx, gy)
    return out
