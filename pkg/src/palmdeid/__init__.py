"""Palmprint de-identification bench.

Modules:
  geometry - keypoint hull, ROI squares, masks, compositing
  synth    - synthetic hand dataset generator with ground truth
  matcher  - competitive-code palmprint matcher
  deid     - embedding fusion, latent blending, masked diffusion sampling
  metrics  - DIR, decidability, EER/RR, SSIM/MS-SSIM/PSNR, diversity
  cli      - synth / deid / eval / report commands
"""

from .deid import DeidConfig, DeidResult, ScoreModel, deidentify
from .geometry import HandKeypoints, PalmMask, RoiSet, RoiSquare
from .matcher import CompetitiveCode, MatcherConfig, MatchScore
from .metrics import DirReport, ScoreSet
from .synth import HandSample, IdentityParams, Jitter, make_dataset, load_manifest

__version__ = "0.1.0"

__all__ = [
    "CompetitiveCode",
    "DeidConfig",
    "DeidResult",
    "DirReport",
    "HandKeypoints",
    "HandSample",
    "IdentityParams",
    "Jitter",
    "MatchScore",
    "MatcherConfig",
    "PalmMask",
    "RoiSet",
    "RoiSquare",
    "ScoreModel",
    "ScoreSet",
    "deidentify",
    "load_manifest",
    "make_dataset",
]
