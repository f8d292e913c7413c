"""Synthetic field generator and dataset splitting."""

from __future__ import annotations

import numpy as np
import pytest

from fieldgraph.errors import InvalidConfig, InvalidSplit
from fieldgraph.synth import (
    FieldSample,
    SynthConfig,
    ellipse_mask,
    generate_dataset,
    generate_field,
    split_sizes,
)

SMALL = SynthConfig(width=64, height=64, seed=0)


class TestEllipse:
    def test_membership(self):
        m = ellipse_mask(20, 20, cx=10.0, cy=10.0, rx=5.0, ry=3.0)
        assert m[10, 10]
        assert m[10, 14] and not m[10, 16]  # x-extent 5
        assert m[12, 10] and not m[14, 10]  # y-extent 3

    def test_boundary_inclusive(self):
        m = ellipse_mask(9, 9, cx=4.0, cy=4.0, rx=2.0, ry=2.0)
        assert m[4, 6] and m[6, 4]

    def test_empty_outside_frame(self):
        m = ellipse_mask(10, 10, cx=100.0, cy=100.0, rx=2.0, ry=2.0)
        assert not m.any()


class TestGenerateField:
    def test_deterministic_per_seed(self):
        img1, mask1 = generate_field(SMALL, seed=9)
        img2, mask2 = generate_field(SMALL, seed=9)
        img3, _ = generate_field(SMALL, seed=10)
        assert np.array_equal(img1.data, img2.data)
        assert np.array_equal(mask1.data, mask2.data)
        assert not np.array_equal(img1.data, img3.data)

    def test_shapes_and_dtypes(self):
        img, mask = generate_field(SMALL, seed=1)
        assert img.data.shape == (64, 64, 3) and img.data.dtype == np.uint8
        assert mask.data.shape == (64, 64) and mask.data.dtype == np.uint8
        assert set(np.unique(mask.data)) <= {0, 1}

    def test_stress_pixels_recolored(self):
        cfg = SynthConfig(width=128, height=128, zero_dropout=0.0, seed=2)
        img, mask = generate_field(cfg, seed=2)
        stress = mask.data.astype(bool)
        assert stress.any() and not stress.all()
        stress_mean = img.data[stress].mean(axis=0)
        base_mean = img.data[~stress].mean(axis=0)
        assert np.abs(stress_mean - cfg.stress_color).max() < 4.0
        assert np.abs(base_mean - cfg.base_color).max() < 4.0

    def test_dropout_rate(self):
        cfg = SynthConfig(width=128, height=128, zero_dropout=0.25, seed=3)
        img, _ = generate_field(cfg, seed=3)
        zero_rate = (img.data == 0).mean()
        assert zero_rate == pytest.approx(0.25, abs=0.02)

    def test_no_dropout_leaves_signal_everywhere(self):
        cfg = SynthConfig(width=128, height=128, zero_dropout=0.0, seed=4)
        img, _ = generate_field(cfg, seed=4)
        # base and stress colors sit far from zero; jitter cannot reach it
        assert (img.data > 0).all()

    def test_blob_count_within_config(self):
        from scipy import ndimage

        cfg = SynthConfig(width=256, height=256, n_blobs=(2, 4), zero_dropout=0.0, seed=5)
        _, mask = generate_field(cfg, seed=5)
        _, n = ndimage.label(mask.data)
        assert 1 <= n <= 4  # blobs may overlap, never exceed the draw count

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"width": 32},
            {"n_blobs": (4, 2)},
            {"n_blobs": (-1, 2)},
            {"blob_radius": (0.0, 5.0)},
            {"base_color": (300, 0, 0)},
            {"color_jitter": (-1.0, 0.0, 0.0)},
            {"zero_dropout": 1.5},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(InvalidConfig):
            SynthConfig(**kwargs).validate()


class TestSplits:
    def test_reference_sizes(self):
        assert split_sizes(317, (0.7, 0.15, 0.15)) == (223, 47, 47)

    def test_floor_remainder_to_train(self):
        assert split_sizes(10, (0.5, 0.25, 0.25)) == (6, 2, 2)
        assert split_sizes(7, (0.7, 0.15, 0.15)) == (5, 1, 1)

    @pytest.mark.parametrize("fractions", [(0.5, 0.5, 0.5), (-0.1, 0.6, 0.5), (0.3, 0.3, 0.3)])
    def test_bad_fractions(self, fractions):
        with pytest.raises(InvalidSplit):
            split_sizes(10, fractions)

    def test_dataset_partition(self):
        splits = generate_dataset(SMALL, 10, (0.6, 0.2, 0.2), seed=6)
        assert (len(splits.train), len(splits.val), len(splits.test)) == (6, 2, 2)
        ids = [s.field_id for part in (splits.train, splits.val, splits.test) for s in part]
        assert len(set(ids)) == 10

    def test_dataset_deterministic(self):
        a = generate_dataset(SMALL, 6, (0.5, 0.25, 0.25), seed=7)
        b = generate_dataset(SMALL, 6, (0.5, 0.25, 0.25), seed=7)
        for sa, sb in zip(a.train + a.val + a.test, b.train + b.val + b.test):
            assert sa.field_id == sb.field_id
            assert sa.seed == sb.seed
            assert np.array_equal(sa.image.data, sb.image.data)

    def test_per_field_seeds_differ(self):
        splits = generate_dataset(SMALL, 6, (0.5, 0.25, 0.25), seed=8)
        seeds = [s.seed for s in splits.train + splits.val + splits.test]
        assert len(set(seeds)) == 6

    def test_empty_dataset_rejected(self):
        with pytest.raises(InvalidConfig):
            generate_dataset(SMALL, 0)

    def test_sample_is_frozen_record(self):
        splits = generate_dataset(SMALL, 2, (0.5, 0.5, 0.0), seed=9)
        s = splits.train[0]
        assert isinstance(s, FieldSample)
        with pytest.raises(AttributeError):
            s.field_id = "other"
