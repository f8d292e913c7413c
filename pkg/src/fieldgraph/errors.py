"""Exception types raised across the package.

Everything inherits from FieldGraphError so callers can catch one base.
Argument and data validation errors also inherit ValueError to stay
friendly to generic handling.
"""


class FieldGraphError(Exception):
    """Base class for all package-specific errors."""


class DecodeError(FieldGraphError):
    """File exists but cannot be decoded as a supported raster."""


class ShapeError(FieldGraphError, ValueError):
    """Raster has the wrong channel count or is below the minimum size."""


class DimensionMismatch(FieldGraphError, ValueError):
    """Two rasters that must share dimensions do not."""


class BinMismatch(FieldGraphError, ValueError):
    """Histograms with different binning were combined."""


class TooManyRegions(FieldGraphError, ValueError):
    """Segmentation produced more regions than the graph can hold."""


class FormatError(FieldGraphError, ValueError):
    """Serialized file is malformed or has an unsupported schema."""


class InvariantError(FieldGraphError, ValueError):
    """Deserialized object violates a structural invariant."""


class AsymmetricInput(FieldGraphError, ValueError):
    """Matrix that must be symmetric is not."""


class NegativeWeight(FieldGraphError, ValueError):
    """Matrix that must be non-negative has a negative entry."""


class ShapeMismatch(FieldGraphError, ValueError):
    """Array shapes are inconsistent with each other or with the model."""


class LengthMismatch(FieldGraphError, ValueError):
    """Paired vectors have different lengths."""


class EmptyMask(FieldGraphError, ValueError):
    """An operation over valid nodes was given a mask with none."""


class EmptyDataset(FieldGraphError, ValueError):
    """Training or evaluation was given no graphs."""


class TaskMismatch(FieldGraphError, ValueError):
    """Graph task labels do not match the configured task."""


class InvalidConfig(FieldGraphError, ValueError):
    """Configuration value outside its documented range."""


class InvalidSplit(FieldGraphError, ValueError):
    """Split fractions are negative or do not sum to one."""
