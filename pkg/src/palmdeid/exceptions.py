"""Exception types shared across the package."""


class PalmDeidError(Exception):
    """Base class for all palmdeid errors."""


class DegenerateKeypoints(PalmDeidError):
    """Palm keypoints are collinear or coincident; no usable region."""


class EmptyIntersection(PalmDeidError):
    """A crop square lies fully outside the image."""


class EmptyMask(PalmDeidError):
    """Polygon and segmentation do not overlap."""


class SizeMismatch(PalmDeidError):
    """Rasters that must share a shape do not."""


class ShapeMismatch(PalmDeidError):
    """Grids/vectors that must share a shape do not."""


class NoOverlap(PalmDeidError):
    """No shift produces mutually valid code cells."""


class InsufficientData(PalmDeidError):
    """Not enough samples/identities/sessions for the requested statistic."""


class EmptyGallery(PalmDeidError):
    """A probe label has no enrolled gallery sample."""


class DimensionMismatch(PalmDeidError):
    """Embeddings of different dimensions cannot be fused."""


class EmptyList(PalmDeidError):
    """An operation received an empty collection."""


class AlphaOutOfRange(PalmDeidError):
    """Interpolation factor outside [0, 1]."""


class ConfigInvalid(PalmDeidError):
    """A run configuration violates its invariants."""


class DegenerateDistribution(PalmDeidError):
    """Both distributions have zero spread; separability undefined."""


class DegenerateReference(PalmDeidError):
    """Genuine and imposter means coincide; ratio undefined."""


class TooSmall(PalmDeidError):
    """Image too small for the requested multi-scale metric."""
