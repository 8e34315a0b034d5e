"""De-identification engine.

Semantic embeddings from exemplar ROIs are fused into a single guidance
vector; original and background latents are blended by an interpolation
factor; the palm region of the latent is regenerated by ancestral
reverse diffusion against an analytic conditional Gaussian score while
unmasked cells follow the forward-noised blended latent. Classical
masking / blurring / pixelating baselines share the same entry point.

The score model is an explicit, swappable stand-in for a learned
denoiser: it defines the conditional mean as a linear map of the fused
embedding plus a fixed band-pass texture field and a context brightness
offset, with per-step marginal variance sigma_t^2 + tau^2.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .exceptions import (
    AlphaOutOfRange,
    ConfigInvalid,
    DimensionMismatch,
    EmptyList,
    ShapeMismatch,
)
from .geometry import (
    build_mask,
    composite_back,
    extract_roi_image,
    extract_roi_set,
    palm_polygon,
    write_back_roi,
)

EMBED_DIM = 64
LATENT_SHAPE = (1, 16, 16)
_BLOCK = 8  # pixels per latent cell at 128x128


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray
    source_tag: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ConfigInvalid("embedding has non-finite entries")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class LatentMap:
    values: np.ndarray
    role_tag: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if not np.all(np.isfinite(v)):
            raise ConfigInvalid("latent map has non-finite entries")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ScoreModel:
    """Analytic conditional Gaussian score model.

    Mean field: reshape(W g) + texture_gain * fixed band-pass field
    + mean_offset + context_gain * context_map. Marginal variance at
    step t: sigma_t^2 + tau^2. The context map carries the blended
    latent's structure into generation, mirroring how an inpainting
    denoiser is constrained by its surroundings.
    """

    tau: float = 0.04
    texture_gain: float = 0.003
    weight_scale: float = 0.005
    weight_seed: int = 101
    field_seed: int = 11
    mean_offset: float = 0.0
    context_gain: float = 1.0
    # Concavity of the context-coupling schedule in the interpolation
    # factor: effective strength alpha * (1 + bend * (1 - alpha)) stays
    # exact at alpha = 1 while giving low alphas a usable prior pull.
    context_bend: float = 0.0
    context_map: np.ndarray | None = field(default=None, compare=False)
    # Dominant texture direction of the surrounding palm (radians); when
    # set, per-seed generation orientations scatter around it instead of
    # being uniform, the way inpainting continues surrounding ridge flow.
    texture_direction: float | None = None
    direction_spread: float = 0.25

    def weight_matrix(self, dim: int = EMBED_DIM, shape: tuple = LATENT_SHAPE) -> np.ndarray:
        """Structured decoder from the embedding grid to the latent grid.

        An 8x8 embedding grid of the fused exemplars is placed onto the
        central 8x8 latent cells (the medium ROI covers exactly that
        region of the full ROI), so generation carries a low-contrast
        imprint of the guidance. Non-square dimensions fall back to a
        seeded random projection of the same per-cell scale.
        """
        n = int(np.prod(shape))
        side = math.isqrt(dim)
        gh, gw = shape[1], shape[2]
        if side * side == dim and gh >= side and gw >= side:
            w = np.zeros((n, dim))
            y0 = (gh - side) // 2
            x0 = (gw - side) // 2
            gain = self.weight_scale * math.sqrt(dim) / 1.0
            for i in range(side):
                for j in range(side):
                    cell = (y0 + i) * gw + (x0 + j)
                    w[cell, i * side + j] = gain
            return w
        rng = np.random.default_rng(self.weight_seed)
        return rng.normal(0.0, self.weight_scale / math.sqrt(dim), size=(n, dim))

    def texture_field(self, shape: tuple = LATENT_SHAPE) -> np.ndarray:
        """Fixed oriented band-pass field near the grid's Nyquist band."""
        rng = np.random.default_rng(self.field_seed)
        noise = rng.standard_normal(shape[1:])
        spec = np.fft.fft2(noise)
        fy = np.fft.fftfreq(shape[1])[:, None]
        fx = np.fft.fftfreq(shape[2])[None, :]
        radius = np.hypot(fx, fy)
        keep = (radius >= 0.25) & (radius <= 0.5)
        band = np.real(np.fft.ifft2(spec * keep))
        band = band - band.mean()
        band = band / band.std()
        return band[None]

    def mean_map(self, g: Embedding, shape: tuple = LATENT_SHAPE) -> np.ndarray:
        w = self.weight_matrix(g.values.size, shape)
        base = (w @ g.values).reshape(shape)
        mu = base + self.texture_gain * self.texture_field(shape) + self.mean_offset
        if self.context_map is not None:
            mu = mu + self.context_gain * np.asarray(self.context_map, dtype=np.float64)
        return mu

    def marginal_variance(self, t: int, steps: int) -> float:
        return float(noise_sigmas(steps)[t] ** 2 + self.tau**2)

    def to_config(self) -> dict:
        return {
            "tau": self.tau,
            "texture_gain": self.texture_gain,
            "weight_scale": self.weight_scale,
            "weight_seed": self.weight_seed,
            "field_seed": self.field_seed,
            "mean_offset": self.mean_offset,
            "context_gain": self.context_gain,
            "context_bend": self.context_bend,
            "direction_spread": self.direction_spread,
        }


_BASELINE_KINDS = ("masking", "blurring", "pixelating")
_FUSION_TAGS = ("s", "m", "f")


@dataclass(frozen=True)
class DeidConfig:
    alpha: float = 0.1
    fusion_set: tuple = ("s", "m")
    steps: int = 50
    seeds: tuple = (0,)
    score_model: ScoreModel = field(default_factory=ScoreModel)
    baseline: str | None = None
    blur_sigma: float = 8.0
    pixelate_block: int = 16
    # Deblocking filter applied to the decoded crop before pasting;
    # the latent decode is blockwise-constant and would leave seams.
    deblock_sigma: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigInvalid(f"alpha must be in [0, 1], got {self.alpha}")
        if self.steps < 2:
            raise ConfigInvalid("steps must be >= 2")
        if not self.seeds:
            raise ConfigInvalid("at least one seed is required")
        fusion = tuple(self.fusion_set)
        if self.baseline is None and not fusion:
            raise ConfigInvalid("fusion_set must be non-empty unless a baseline is set")
        for tag in fusion:
            if tag not in _FUSION_TAGS:
                raise ConfigInvalid(f"unknown fusion tag {tag!r}")
        if self.baseline is not None and self.baseline not in _BASELINE_KINDS:
            raise ConfigInvalid(f"unknown baseline {self.baseline!r}")
        object.__setattr__(self, "fusion_set", fusion)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def to_config(self) -> dict:
        return {
            "alpha": self.alpha,
            "fusion_set": list(self.fusion_set),
            "steps": self.steps,
            "seeds": list(self.seeds),
            "score_model": self.score_model.to_config(),
            "baseline": self.baseline,
            "blur_sigma": self.blur_sigma,
            "pixelate_block": self.pixelate_block,
            "deblock_sigma": self.deblock_sigma,
        }


@dataclass(frozen=True)
class DeidResult:
    images: list
    rois: list
    provenance: dict


def encode_semantic(roi: np.ndarray, tag: str = "roi") -> Embedding:
    """Coarse content descriptor: 8x8 grid of block means, high-passed,
    L2-normalized. Constant input maps to the zero vector."""
    roi = np.asarray(roi, dtype=np.float64)
    side = roi.shape[0] // 8
    blocks = roi.reshape(8, side, 8, side).mean(axis=(1, 3)).ravel()
    blocks = blocks - blocks.mean()
    norm = float(np.linalg.norm(blocks))
    if norm < 1e-12:
        return Embedding(np.zeros(EMBED_DIM), tag)
    return Embedding(blocks / norm, tag)


def fuse_embeddings(embeddings: list) -> Embedding:
    """Component-wise arithmetic mean of the input embeddings."""
    if not embeddings:
        raise EmptyList("cannot fuse an empty embedding list")
    dim = embeddings[0].values.size
    for g in embeddings:
        if g.values.size != dim:
            raise DimensionMismatch("embeddings differ in dimension")
    stacked = np.stack([g.values for g in embeddings])
    return Embedding(stacked.mean(axis=0), "fused")


def encode_latent(image: np.ndarray, role_tag: str = "original") -> LatentMap:
    """Block-average the image to the latent grid, centered on zero."""
    img = np.asarray(image, dtype=np.float64)
    gh = img.shape[0] // _BLOCK
    gw = img.shape[1] // _BLOCK
    blocks = img.reshape(gh, _BLOCK, gw, _BLOCK).mean(axis=(1, 3))
    return LatentMap((blocks - 0.5)[None], role_tag)


def decode_latent(z: LatentMap) -> np.ndarray:
    """Invert the latent affine map and expand each cell to its block."""
    grid = z.values[0] + 0.5
    return np.clip(np.kron(grid, np.ones((_BLOCK, _BLOCK))), 0.0, 1.0)


def interpolate_prior(z_o: LatentMap, z_bg: LatentMap, alpha: float) -> LatentMap:
    """Element-wise blend alpha * z_o + (1 - alpha) * z_bg."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must be in [0, 1], got {alpha}")
    if z_o.values.shape != z_bg.values.shape:
        raise ShapeMismatch("latent maps differ in shape")
    return LatentMap(alpha * z_o.values + (1.0 - alpha) * z_bg.values, "interpolated")


def noise_sigmas(steps: int) -> np.ndarray:
    """Noise levels sigma_0..sigma_steps (sigma_0 = 0, increasing).

    Derived from a 1000-step linear beta schedule (1e-4 to 0.02)
    subsampled to the requested step count, expressed as the
    signal-relative noise scale sqrt((1 - abar) / abar).
    """
    if steps < 2:
        raise ConfigInvalid("steps must be >= 2")
    betas = np.linspace(1e-4, 0.02, 1000)
    abar = np.cumprod(1.0 - betas)
    idx = np.ceil(np.arange(1, steps + 1) * (1000 / steps)).astype(int) - 1
    sig = np.sqrt((1.0 - abar[idx]) / abar[idx])
    return np.concatenate([[0.0], sig])


def conditional_score(
    z: LatentMap | np.ndarray,
    t: int,
    g: Embedding,
    model: ScoreModel,
    steps: int = 50,
) -> np.ndarray:
    """Exact score of N(mean_map(g), sigma_t^2 + tau^2) per cell at z."""
    values = z.values if isinstance(z, LatentMap) else np.asarray(z, dtype=np.float64)
    mu = model.mean_map(g, values.shape)
    return (mu - values) / model.marginal_variance(t, steps)


def _oriented_noise(rng, shape: tuple, theta: float, spread: float = 0.25) -> np.ndarray:
    """Band-limited noise with a dominant stripe orientation.

    White noise filtered by an orientation-selective annulus in the
    frequency plane. The field is stationary and Gaussian with exactly
    unit variance and zero mean per cell, so per-cell chain statistics
    are identical to iid driving noise; only cross-cell correlation
    changes, giving each draw a ridge-like dominant direction.
    """
    h, w = shape[-2], shape[-1]
    white = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fx, fy)
    # stripes along theta have wave vectors perpendicular to theta
    wave = np.arctan2(fy, fx)
    ang = np.angle(np.exp(2j * (wave - (theta + 0.5 * math.pi))))
    weight = np.exp(-(ang**2) / (8.0 * spread**2)) * ((radius >= 0.3) & (radius <= 0.5))
    filtered = np.real(np.fft.ifft2(np.fft.fft2(white) * weight))
    scale = math.sqrt(float(np.sum(weight**2)) / (h * w))
    return np.broadcast_to((filtered / scale)[None], shape).copy()


def sample_inpaint(
    z_in: LatentMap,
    mask_latent: np.ndarray,
    g: Embedding,
    seed: int,
    steps: int = 50,
    model: ScoreModel = ScoreModel(),
) -> LatentMap:
    """Ancestral reverse diffusion: masked cells follow the score model's
    exact reverse kernel, unmasked cells are overwritten with the
    forward-noised blended latent (so they equal it exactly at the end).

    Masked-region driving noise is oriented per seed (standard-normal
    per cell, correlated across cells) so regenerated texture carries a
    seed-specific dominant direction the way real palms do."""
    mask = np.asarray(mask_latent, dtype=bool)
    if mask.ndim == 2:
        mask = mask[None]
    if mask.shape != z_in.values.shape:
        raise ShapeMismatch("latent mask shape differs from the latent map")
    sig = noise_sigmas(steps)
    var = sig**2 + model.tau**2
    rng = np.random.default_rng(seed)
    shape = z_in.values.shape
    mu = model.mean_map(g, shape)
    y = rng.standard_normal(shape)
    if model.texture_direction is None:
        theta = float(rng.uniform(0.0, math.pi))
    else:
        theta = model.texture_direction + model.direction_spread * float(rng.standard_normal())
    for t in range(steps, 0, -1):
        score = (mu - y) / var[t]
        delta = var[t] - var[t - 1]
        step_var = delta * var[t - 1] / var[t]
        y_masked = y + delta * score + math.sqrt(step_var) * _oriented_noise(rng, shape, theta)
        y_unmasked = z_in.values + sig[t - 1] * rng.standard_normal(shape)
        y = np.where(mask, y_masked, y_unmasked)
    return LatentMap(np.where(mask, y, z_in.values), "generated")


def baseline_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out the masked region; everything else untouched."""
    out = np.asarray(image, dtype=np.float64).copy()
    out[np.asarray(mask, dtype=bool)] = 0.0
    return out


def baseline_blur(image: np.ndarray, mask: np.ndarray, sigma: float = 8.0) -> np.ndarray:
    """Gaussian blur inside the mask, renormalized at the boundary."""
    img = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    num = ndimage.gaussian_filter(img * m, sigma)
    den = ndimage.gaussian_filter(m, sigma)
    blurred = np.divide(num, den, out=img.copy(), where=den > 1e-12)
    return np.where(m > 0, blurred, img)


def baseline_pixelate(image: np.ndarray, mask: np.ndarray, block: int = 16) -> np.ndarray:
    """Replace masked pixels by their block's masked-region mean."""
    img = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    h, w = img.shape
    out = img.copy()
    for y0 in range(0, h, block):
        for x0 in range(0, w, block):
            tile = (slice(y0, min(y0 + block, h)), slice(x0, min(x0 + block, w)))
            sel = m[tile]
            if sel.any():
                out[tile][sel] = img[tile][sel].mean()
    return out


def _crop_mask(mask: np.ndarray, square) -> np.ndarray:
    """Palm mask resampled into crop space, thresholded at half coverage."""
    return extract_roi_image(mask.astype(np.float64), square) >= 0.5


def _feather_weights(mask: np.ndarray, width: float = 2.0) -> np.ndarray:
    """Linear blend weight ramping over `width` px inside the mask edge."""
    dist = ndimage.distance_transform_edt(mask)
    return np.clip(dist / width, 0.0, 1.0)


def _dominant_direction(image: np.ndarray, mask: np.ndarray) -> float:
    """Dominant stripe direction (radians) of the masked region, from the
    gradient structure tensor; stripes run perpendicular to gradients."""
    gy, gx = np.gradient(np.asarray(image, dtype=np.float64))
    gx, gy = gx[mask], gy[mask]
    theta_grad = 0.5 * math.atan2(2.0 * float(np.sum(gx * gy)),
                                  float(np.sum(gx * gx - gy * gy)))
    return theta_grad + 0.5 * math.pi


def _input_hash(sample) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(sample.image).tobytes())
    h.update(np.ascontiguousarray(sample.keypoints.points).tobytes())
    h.update(np.ascontiguousarray(sample.seg).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class InpaintPlan:
    """Everything the per-seed generation loop needs for one sample."""

    square: object
    froi: np.ndarray
    crop_mask: np.ndarray
    mask_latent: np.ndarray
    fused: Embedding
    z_in: LatentMap
    model: ScoreModel


def prepare_inpaint(sample, cfg: DeidConfig) -> InpaintPlan:
    """Geometry, embeddings, latent blend and score-model setup for a sample."""
    roi_set = extract_roi_set(sample.image, sample.keypoints)
    square = roi_set.squares["f"]
    froi = roi_set.images["f"]
    pmask = build_mask(palm_polygon(sample.keypoints), sample.seg).raster

    embeddings = [
        encode_semantic(roi_set.images[tag], tag + "ROI")
        for tag in _FUSION_TAGS
        if tag in cfg.fusion_set
    ]
    fused = fuse_embeddings(embeddings)

    crop_mask = _crop_mask(pmask, square)
    seg_crop = _crop_mask(sample.seg, square)
    # Context brightness comes from unmasked hand pixels; crop corners may
    # contain background that would skew the fill toward black.
    context = seg_crop & ~crop_mask
    if not context.any():
        context = ~crop_mask if (~crop_mask).any() else np.ones_like(crop_mask)
    fill = float(froi[context].mean())
    z_o = encode_latent(froi, "original")
    z_bg = encode_latent(np.where(crop_mask, fill, froi), "background")
    z_in = interpolate_prior(z_o, z_bg, cfg.alpha)

    gh = crop_mask.shape[0] // _BLOCK
    gw = crop_mask.shape[1] // _BLOCK
    mask_latent = (
        crop_mask.reshape(gh, _BLOCK, gw, _BLOCK).mean(axis=(1, 3)) >= 0.5
    )[None]

    # The regenerated region matches the surrounding palm brightness and
    # is steered by the blended latent's structure: in masked cells the
    # centered blend equals alpha * (original structure), so the
    # interpolation factor controls how much source layout survives. The
    # concave bend keeps the pull usable at small alpha, exact at 1.
    bend = 1.0 + cfg.score_model.context_bend * (1.0 - cfg.alpha)
    direction = cfg.score_model.texture_direction
    if direction is None:
        direction = _dominant_direction(froi, crop_mask)
    model = replace(
        cfg.score_model,
        mean_offset=cfg.score_model.mean_offset + fill - 0.5,
        context_map=bend * (z_in.values - (fill - 0.5)),
        texture_direction=direction,
        # More prior pulls generation toward the context's ridge flow.
        direction_spread=cfg.score_model.direction_spread * (1.0 - cfg.alpha) ** 2,
    )
    return InpaintPlan(
        square=square,
        froi=froi,
        crop_mask=crop_mask,
        mask_latent=mask_latent,
        fused=fused,
        z_in=z_in,
        model=model,
    )


def deidentify(sample, cfg: DeidConfig = DeidConfig()) -> DeidResult:
    """Run the full de-identification pipeline on one hand sample."""
    provenance = {
        "config": cfg.to_config(),
        "input_hash": _input_hash(sample),
        "seeds": list(cfg.seeds),
    }

    if cfg.baseline is not None:
        pmask = build_mask(palm_polygon(sample.keypoints), sample.seg).raster
        square = extract_roi_set(sample.image, sample.keypoints).squares["f"]
        if cfg.baseline == "masking":
            modified = baseline_mask(sample.image, pmask)
        elif cfg.baseline == "blurring":
            modified = baseline_blur(sample.image, pmask, cfg.blur_sigma)
        else:
            modified = baseline_pixelate(sample.image, pmask, cfg.pixelate_block)
        out = composite_back(sample.image, modified, sample.seg)
        roi = extract_roi_image(out, square)
        return DeidResult(
            images=[out for _ in cfg.seeds],
            rois=[roi for _ in cfg.seeds],
            provenance=provenance,
        )

    plan = prepare_inpaint(sample, cfg)
    weights = _feather_weights(plan.crop_mask)

    images, rois = [], []
    for seed in cfg.seeds:
        z_gen = sample_inpaint(plan.z_in, plan.mask_latent, plan.fused, seed, cfg.steps, plan.model)
        decoded = decode_latent(z_gen)
        if cfg.deblock_sigma > 0.0:
            decoded = ndimage.gaussian_filter(decoded, cfg.deblock_sigma)
        crop_out = weights * decoded + (1.0 - weights) * plan.froi
        pasted = write_back_roi(sample.image, plan.square, crop_out)
        images.append(composite_back(sample.image, pasted, sample.seg))
        rois.append(crop_out)
    return DeidResult(images=images, rois=rois, provenance=provenance)
