"""Synthetic aerial field generator with ground-truth stress masks.

Fields are a jittered base color with a few elliptical stress blobs
recolored toward a separable stress color. A dropout step zeroes random
channel values to mimic dead pixels, which exercises the nonzero-only
feature statistics downstream. Everything is deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, InvalidSplit
from .raster_io import BinaryMask, RasterImage


@dataclass(frozen=True)
class SynthConfig:
    width: int = 512
    height: int = 512
    n_blobs: tuple[int, int] = (3, 6)
    blob_radius: tuple[float, float] = (20.0, 60.0)
    base_color: tuple[int, int, int] = (62, 140, 74)
    stress_color: tuple[int, int, int] = (176, 162, 66)
    color_jitter: tuple[float, float, float] = (8.0, 8.0, 8.0)
    zero_dropout: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.width < 64 or self.height < 64:
            raise InvalidConfig("width and height must be at least 64")
        lo, hi = self.n_blobs
        if lo < 0 or hi < lo:
            raise InvalidConfig(f"bad blob count range {self.n_blobs}")
        rlo, rhi = self.blob_radius
        if rlo < 1 or rhi < rlo:
            raise InvalidConfig(f"bad blob radius range {self.blob_radius}")
        for color in (self.base_color, self.stress_color):
            if len(color) != 3 or any(not 0 <= c <= 255 for c in color):
                raise InvalidConfig(f"bad color {color}")
        if any(j < 0 for j in self.color_jitter):
            raise InvalidConfig(f"jitter must be non-negative, got {self.color_jitter}")
        if not 0.0 <= self.zero_dropout <= 1.0:
            raise InvalidConfig(f"zero_dropout must lie in [0, 1], got {self.zero_dropout}")


@dataclass(frozen=True)
class FieldSample:
    field_id: str
    image: RasterImage
    mask: BinaryMask
    seed: int


@dataclass
class DatasetSplits:
    train: list[FieldSample]
    val: list[FieldSample]
    test: list[FieldSample]


def ellipse_mask(
    width: int, height: int, cx: float, cy: float, rx: float, ry: float
) -> np.ndarray:
    """Boolean raster of the filled axis-aligned ellipse."""
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0


def generate_field(cfg: SynthConfig, seed: int) -> tuple[RasterImage, BinaryMask]:
    """One field image and its stress mask, deterministic for (cfg, seed)."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    w, h = cfg.width, cfg.height
    jitter = np.asarray(cfg.color_jitter, dtype=np.float64)

    img = np.asarray(cfg.base_color, dtype=np.float64) + rng.normal(0.0, 1.0, (h, w, 3)) * jitter

    n_blobs = int(rng.integers(cfg.n_blobs[0], cfg.n_blobs[1] + 1))
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(n_blobs):
        rx = float(rng.uniform(*cfg.blob_radius))
        ry = float(rng.uniform(*cfg.blob_radius))
        # Clamp so the blob always fits inside the frame.
        rx = min(rx, (w - 2) / 2.0)
        ry = min(ry, (h - 2) / 2.0)
        cx = float(rng.uniform(rx, w - rx))
        cy = float(rng.uniform(ry, h - ry))
        mask |= ellipse_mask(w, h, cx, cy, rx, ry)

    stress = np.asarray(cfg.stress_color, dtype=np.float64) + rng.normal(0.0, 1.0, (h, w, 3)) * jitter
    img = np.where(mask[..., None], stress, img)
    img = np.clip(np.rint(img), 0.0, 255.0).astype(np.uint8)

    if cfg.zero_dropout > 0.0:
        dropped = rng.random((h, w, 3)) < cfg.zero_dropout
        img[dropped] = 0

    return (
        RasterImage(width=w, height=h, data=img),
        BinaryMask(width=w, height=h, data=mask.astype(np.uint8)),
    )


def split_sizes(n_fields: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Validation and test take the floor; the remainder goes to train."""
    f_train, f_val, f_test = fractions
    if min(fractions) < 0.0 or abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise InvalidSplit(f"fractions {fractions} must be non-negative and sum to 1")
    n_val = int(n_fields * f_val)
    n_test = int(n_fields * f_test)
    n_train = n_fields - n_val - n_test
    return n_train, n_val, n_test


def generate_dataset(
    cfg: SynthConfig,
    n_fields: int,
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int | None = None,
) -> DatasetSplits:
    """Generate n_fields and partition them into disjoint splits.

    Field content depends only on (cfg, master seed, index), so the same
    seed always reproduces the same dataset and split assignment.
    """
    if n_fields < 1:
        raise InvalidConfig("n_fields must be positive")
    master = cfg.seed if seed is None else seed
    n_train, n_val, _ = split_sizes(n_fields, fractions)

    samples = []
    for i in range(n_fields):
        field_seed = int(np.random.SeedSequence([master, i]).generate_state(1)[0])
        image, mask = generate_field(cfg, field_seed)
        samples.append(
            FieldSample(field_id=f"field_{i:04d}", image=image, mask=mask, seed=field_seed)
        )

    order = np.random.default_rng(master).permutation(n_fields)
    shuffled = [samples[i] for i in order]
    return DatasetSplits(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
    )
