"""Per-region color statistics and histogram similarity.

Each region yields a 9-vector: per-channel mean and population standard
deviation of the strictly nonzero intensities (scaled to [0, 1]), plus the
fraction of pixels with a nonzero value in that channel. Zero intensities
are treated as dropouts and excluded from the mean and deviation.

Region similarity is one minus the Bhattacharyya coefficient between joint
RGB histograms, so identical color distributions get weight zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BinMismatch
from .raster_io import RasterImage
from .slic import SuperpixelRegion

DEFAULT_BINS = 8


@dataclass(frozen=True)
class NodeFeatures:
    """Region statistics; channel order is red, green, blue."""

    mu: np.ndarray      # (3,) mean of nonzero intensities / 255
    sigma: np.ndarray   # (3,) population std of nonzero intensities / 255
    alpha: np.ndarray   # (3,) fraction of pixels with a nonzero value

    def as_vector(self) -> np.ndarray:
        """Flatten to the 9-vector [mu_rgb, sigma_rgb, alpha_rgb]."""
        return np.concatenate([self.mu, self.sigma, self.alpha])


@dataclass(frozen=True)
class JointHistogram:
    """Joint RGB histogram with bins_per_channel^3 cells."""

    bins_per_channel: int
    counts: np.ndarray  # (bins, bins, bins) float64
    normalized: bool

    def __post_init__(self) -> None:
        b = self.bins_per_channel
        if self.counts.shape != (b, b, b):
            raise BinMismatch(
                f"counts shape {self.counts.shape} does not match {b} bins per channel"
            )
        if (self.counts < 0).any():
            raise ValueError("histogram counts must be non-negative")


def node_features(region: SuperpixelRegion, img: RasterImage) -> NodeFeatures:
    """Compute the 9-element feature summary of a region.

    A channel with no nonzero pixels gets mu = sigma = 0 and alpha = 0.
    """
    rows = region.pixels[:, 0]
    cols = region.pixels[:, 1]
    values = img.data[rows, cols].astype(np.float64)  # (area, 3)
    nonzero = values > 0
    counts = nonzero.sum(axis=0)

    mu = np.zeros(3)
    sigma = np.zeros(3)
    for c in range(3):
        if counts[c] > 0:
            active = values[nonzero[:, c], c] / 255.0
            mu[c] = active.mean()
            sigma[c] = active.std()
    alpha = counts / float(region.area)
    return NodeFeatures(mu=mu, sigma=sigma, alpha=alpha)


def joint_histogram(
    region: SuperpixelRegion, img: RasterImage, bins: int = DEFAULT_BINS
) -> JointHistogram:
    """Normalized joint RGB histogram over all pixels of a region.

    Zero intensities participate here, unlike in node_features. Bin index
    per channel is floor(value * bins / 256).
    """
    if bins < 1 or bins > 256:
        raise ValueError(f"bins must be in [1, 256], got {bins}")
    rows = region.pixels[:, 0]
    cols = region.pixels[:, 1]
    values = img.data[rows, cols].astype(np.int64)
    idx = values * bins // 256
    flat = (idx[:, 0] * bins + idx[:, 1]) * bins + idx[:, 2]
    counts = np.bincount(flat, minlength=bins**3).astype(np.float64)
    counts /= region.area
    return JointHistogram(
        bins_per_channel=bins,
        counts=counts.reshape(bins, bins, bins),
        normalized=True,
    )


def bhattacharyya(h1: JointHistogram, h2: JointHistogram) -> float:
    """Bhattacharyya coefficient, sum of sqrt(h1 * h2) over all cells.

    Symmetric by construction and clipped into [0, 1] to absorb float
    summation error on the upper end.
    """
    if h1.bins_per_channel != h2.bins_per_channel:
        raise BinMismatch(
            f"histograms use {h1.bins_per_channel} and {h2.bins_per_channel} bins"
        )
    if not (h1.normalized and h2.normalized):
        raise ValueError("bhattacharyya requires normalized histograms")
    coeff = float(np.sqrt(h1.counts * h2.counts).sum())
    return min(max(coeff, 0.0), 1.0)


def similarity_matrix(histograms: list[JointHistogram]) -> np.ndarray:
    """Pairwise dissimilarity W with W_ij = 1 - BC_ij, zero diagonal.

    The result is exactly symmetric; the upper triangle is computed once
    and mirrored.
    """
    n = len(histograms)
    if n == 0:
        return np.zeros((0, 0))
    bins = histograms[0].bins_per_channel
    for h in histograms:
        if h.bins_per_channel != bins:
            raise BinMismatch("histograms disagree on bins per channel")
        if not h.normalized:
            raise ValueError("similarity_matrix requires normalized histograms")
    roots = np.sqrt(np.stack([h.counts.ravel() for h in histograms]))
    coeff = np.clip(roots @ roots.T, 0.0, 1.0)
    w = np.triu(1.0 - coeff, k=1)
    return w + w.T
