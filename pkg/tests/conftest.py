"""Shared fixtures and the acceptance-suite summary hook."""

from __future__ import annotations

import numpy as np
import pytest

from fieldgraph.graph_build import FieldGraph, build_field_graph, with_targets
from fieldgraph.raster_io import rgb_to_lab
from fieldgraph.slic import default_min_area, enforce_connectivity, slic_segment
from fieldgraph.synth import SynthConfig, generate_field

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.failed:
        _acceptance_results[name] = "FAIL"
    elif report.when == "call" and report.passed:
        _acceptance_results.setdefault(name, "PASS")
    elif report.skipped:
        _acceptance_results[name] = "FAIL (skipped)"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance_results.items():
        terminalreporter.write_line(f"{outcome:4s}  {name}")


@pytest.fixture(scope="session")
def clean_sample():
    """One dropout-free 128x128 field; fast to segment in module tests."""
    cfg = SynthConfig(width=128, height=128, zero_dropout=0.0, seed=5)
    img, mask = generate_field(cfg, seed=5)
    return img, mask


def segment(img, k=64, compactness=30.0, max_iter=10):
    lab = rgb_to_lab(img)
    sp = slic_segment(lab, k, compactness, max_iter)
    return enforce_connectivity(sp, default_min_area(img.width, img.height, k))


@pytest.fixture(scope="session")
def small_graph(clean_sample):
    """Padded graph with classification targets over the 128x128 field."""
    img, mask = clean_sample
    sp = segment(img)
    g = build_field_graph(img, sp, n=100, source_id="field-small")
    return with_targets(g, sp, mask, "classification"), sp


@pytest.fixture
def graph_factory():
    """Builds random valid FieldGraph instances without going through SLIC."""

    def make(rng, n=16, n_real=None, task="classification", feature_dim=9):
        if n_real is None:
            n_real = int(rng.integers(1, n + 1))
        features = np.zeros((n, feature_dim))
        features[:n_real] = rng.random((n_real, feature_dim))
        upper = np.triu(rng.random((n, n)), k=1)
        upper[n_real:, :] = 0.0
        upper[:, n_real:] = 0.0
        adjacency = upper + upper.T
        targets = np.zeros(n)
        if task == "classification":
            targets[:n_real] = rng.integers(0, 2, n_real).astype(np.float64)
        else:
            targets[:n_real] = rng.random(n_real)
        valid = np.zeros(n, dtype=np.uint8)
        valid[:n_real] = 1
        centroids = np.zeros((n, 2))
        centroids[:n_real] = rng.random((n_real, 2)) * 100.0
        g = FieldGraph(
            n=n,
            n_real=n_real,
            features=features,
            adjacency=adjacency,
            targets=targets,
            valid_mask=valid,
            centroids=centroids,
            task=task,
            source_id=f"rand-{n}-{n_real}",
        )
        g.validate()
        return g

    return make
