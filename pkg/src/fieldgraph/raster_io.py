"""Raster loading, saving, and color space conversion.

Images are 8-bit RGB in PNG or TIFF containers. Masks are single-channel
rasters binarized on load (any nonzero value counts as positive).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, DimensionMismatch, ShapeError

MIN_DIM = 16

_SUPPORTED_FORMATS = {"PNG", "TIFF"}

# sRGB to XYZ under D65, standard primaries
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


@dataclass(frozen=True)
class RasterImage:
    """8-bit RGB image; data is (height, width, 3) uint8, row-major."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.shape != (self.height, self.width, 3):
            raise ShapeError(
                f"image data shape {self.data.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if self.data.dtype != np.uint8:
            raise ShapeError(f"image data must be uint8, got {self.data.dtype}")


@dataclass(frozen=True)
class BinaryMask:
    """Single-channel mask; data is (height, width) uint8 over {0, 1}."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.shape != (self.height, self.width):
            raise ShapeError(
                f"mask data shape {self.data.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if self.data.dtype != np.uint8:
            raise ShapeError(f"mask data must be uint8, got {self.data.dtype}")


@dataclass(frozen=True)
class LabImage:
    """CIE L*a*b* image; data is (height, width, 3) float64."""

    width: int
    height: int
    data: np.ndarray


def load_image(path: str | Path) -> RasterImage:
    """Load an 8-bit RGB PNG or TIFF.

    Raises FileNotFoundError for a missing path, DecodeError for an
    unsupported or corrupt file, ShapeError for wrong channel count or
    images smaller than MIN_DIM on either side.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        with Image.open(path) as img:
            fmt = img.format
            mode = img.mode
            if fmt not in _SUPPORTED_FORMATS:
                raise DecodeError(f"{path}: unsupported format {fmt!r}")
            if mode != "RGB":
                raise ShapeError(f"{path}: expected 3-channel 8-bit RGB, got mode {mode!r}")
            data = np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DecodeError(f"{path}: not a decodable image") from exc
    except OSError as exc:
        raise DecodeError(f"{path}: decode failed: {exc}") from exc
    h, w = data.shape[:2]
    if w < MIN_DIM or h < MIN_DIM:
        raise ShapeError(f"{path}: image is {w}x{h}, minimum is {MIN_DIM}x{MIN_DIM}")
    return RasterImage(width=w, height=h, data=data)


def load_mask(path: str | Path, expected_width: int, expected_height: int) -> BinaryMask:
    """Load a single-channel mask and binarize it (nonzero -> 1).

    Raises DimensionMismatch if the decoded size differs from the expected
    dimensions, DecodeError for multi-channel or undecodable files.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        with Image.open(path) as img:
            if img.mode not in ("1", "L", "I", "I;16"):
                raise DecodeError(
                    f"{path}: expected single-channel mask, got mode {img.mode!r}"
                )
            data = np.asarray(img)
    except UnidentifiedImageError as exc:
        raise DecodeError(f"{path}: not a decodable image") from exc
    except OSError as exc:
        raise DecodeError(f"{path}: decode failed: {exc}") from exc
    h, w = data.shape[:2]
    if (w, h) != (expected_width, expected_height):
        raise DimensionMismatch(
            f"{path}: mask is {w}x{h}, expected {expected_width}x{expected_height}"
        )
    return BinaryMask(width=w, height=h, data=(data != 0).astype(np.uint8))


def save_image(img: RasterImage, path: str | Path) -> None:
    """Write an RGB image as PNG."""
    Image.fromarray(img.data, mode="RGB").save(Path(path), format="PNG")


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    """Write a mask as 8-bit grayscale PNG with positives at 255."""
    Image.fromarray(mask.data * np.uint8(255), mode="L").save(Path(path), format="PNG")


def rgb_to_lab(img: RasterImage) -> LabImage:
    """Convert 8-bit sRGB to CIE L*a*b* under the D65 white point.

    Applies the piecewise sRGB gamma decode, the linear RGB to XYZ matrix,
    and the cube-root Lab transfer function. Gray inputs map to a = b = 0
    up to matrix rounding.
    """
    srgb = img.data.astype(np.float64) / 255.0
    linear = np.where(
        srgb <= 0.04045,
        srgb / 12.92,
        ((srgb + 0.055) / 1.055) ** 2.4,
    )
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _D65_WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta * delta) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return LabImage(width=img.width, height=img.height, data=lab)
