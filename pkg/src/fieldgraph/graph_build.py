"""Field graph assembly, node targets, and JSON serialization.

A field graph is a fixed-size container of n nodes (default 400). The
first n_real nodes correspond to superpixel regions ordered by region id;
the remainder are neutral padding with zero features, zero adjacency, and
valid_mask 0, present only to keep tensor shapes constant. Region
centroids ride along as metadata and are never model input.

Files are JSON with schema_version 1. All reals are written at 32-bit
float precision, so save followed by load is exact at that width.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    FormatError,
    InvariantError,
    TooManyRegions,
)
from .featurize import DEFAULT_BINS, joint_histogram, node_features, similarity_matrix
from .raster_io import BinaryMask, RasterImage
from .slic import SuperpixelMap, extract_regions

DEFAULT_NODES = 400
FEATURE_DIM = 9

TASKS = ("classification", "regression")

_SCHEMA_VERSION = 1
_REQUIRED_KEYS = {
    "schema_version",
    "n",
    "n_real",
    "task",
    "source_id",
    "features",
    "adjacency",
    "targets",
    "valid_mask",
    "centroids",
}


@dataclass(frozen=True)
class FieldGraph:
    """Padded graph of one field. task is None until targets are assigned."""

    n: int
    n_real: int
    features: np.ndarray    # (n, 9) float64
    adjacency: np.ndarray   # (n, n) float64, symmetric, zero diagonal
    targets: np.ndarray     # (n,) float64
    valid_mask: np.ndarray  # (n,) uint8, 1 exactly for the first n_real
    centroids: np.ndarray   # (n, 2) float64 (x, y), metadata only
    task: str | None = None
    source_id: str = ""

    def validate(self) -> None:
        """Check every structural invariant; raise InvariantError on failure."""
        n, n_real = self.n, self.n_real
        if not 0 <= n_real <= n:
            raise InvariantError(f"n_real={n_real} outside [0, n={n}]")
        if self.features.shape != (n, FEATURE_DIM):
            raise InvariantError(f"features shape {self.features.shape} != ({n}, {FEATURE_DIM})")
        if self.adjacency.shape != (n, n):
            raise InvariantError(f"adjacency shape {self.adjacency.shape} != ({n}, {n})")
        if self.targets.shape != (n,) or self.valid_mask.shape != (n,):
            raise InvariantError("targets and valid_mask must have length n")
        if self.centroids.shape != (n, 2):
            raise InvariantError(f"centroids shape {self.centroids.shape} != ({n}, 2)")
        expected_mask = np.zeros(n, dtype=np.uint8)
        expected_mask[:n_real] = 1
        if not np.array_equal(self.valid_mask, expected_mask):
            raise InvariantError("valid_mask must be 1 exactly for the first n_real nodes")
        a = self.adjacency
        if not np.array_equal(a, a.T):
            raise InvariantError("adjacency must be symmetric")
        if a.min() < 0.0 or a.max() > 1.0:
            raise InvariantError("adjacency entries must lie in [0, 1]")
        if np.any(np.diagonal(a) != 0.0):
            raise InvariantError("adjacency diagonal must be zero")
        if np.any(a[n_real:, :] != 0.0) or np.any(a[:, n_real:] != 0.0):
            raise InvariantError("neutral rows and columns of adjacency must be zero")
        if np.any(self.features[n_real:] != 0.0):
            raise InvariantError("neutral feature rows must be zero")
        if np.any(self.targets[n_real:] != 0.0):
            raise InvariantError("neutral targets must be zero")
        if self.task is not None and self.task not in TASKS:
            raise InvariantError(f"unknown task {self.task!r}")
        if self.task == "classification":
            real = self.targets[:n_real]
            if not np.all((real == 0.0) | (real == 1.0)):
                raise InvariantError("classification targets must be 0 or 1")
        if self.targets.min() < 0.0 or self.targets.max() > 1.0:
            raise InvariantError("targets must lie in [0, 1]")


def build_field_graph(
    img: RasterImage,
    sp: SuperpixelMap,
    n: int = DEFAULT_NODES,
    bins: int = DEFAULT_BINS,
    source_id: str = "",
) -> FieldGraph:
    """Assemble the padded graph for one segmented field.

    Nodes follow region id order. Adjacency is the Bhattacharyya
    dissimilarity between joint color histograms, fully connected over the
    real nodes. Targets start at zero with task unset.
    """
    if sp.width != img.width or sp.height != img.height:
        raise DimensionMismatch(
            f"superpixel map is {sp.width}x{sp.height}, image is {img.width}x{img.height}"
        )
    n_real = sp.n_regions
    if n_real > n:
        raise TooManyRegions(f"{n_real} regions exceed graph size {n}")

    regions = extract_regions(sp)
    features = np.zeros((n, FEATURE_DIM))
    centroids = np.zeros((n, 2))
    hists = []
    for region in regions:
        features[region.id] = node_features(region, img).as_vector()
        centroids[region.id] = region.centroid
        hists.append(joint_histogram(region, img, bins))

    adjacency = np.zeros((n, n))
    adjacency[:n_real, :n_real] = similarity_matrix(hists)

    valid_mask = np.zeros(n, dtype=np.uint8)
    valid_mask[:n_real] = 1
    return FieldGraph(
        n=n,
        n_real=n_real,
        features=features,
        adjacency=adjacency,
        targets=np.zeros(n),
        valid_mask=valid_mask,
        centroids=centroids,
        task=None,
        source_id=source_id,
    )


def _region_positive_fractions(sp: SuperpixelMap, mask: BinaryMask, n: int) -> np.ndarray:
    if mask.width != sp.width or mask.height != sp.height:
        raise DimensionMismatch(
            f"mask is {mask.width}x{mask.height}, map is {sp.width}x{sp.height}"
        )
    if n < sp.n_regions:
        raise TooManyRegions(f"{sp.n_regions} regions exceed target length {n}")
    flat = sp.labels.ravel()
    positives = np.bincount(flat, weights=mask.data.ravel().astype(np.float64), minlength=n)
    areas = np.bincount(flat, minlength=n).astype(np.float64)
    out = np.zeros(n)
    real = areas > 0
    out[real] = positives[real] / areas[real]
    return out


def make_classification_targets(
    sp: SuperpixelMap, mask: BinaryMask, n: int | None = None
) -> np.ndarray:
    """Per-node binary target: 1 iff the region contains any positive pixel."""
    n = sp.n_regions if n is None else n
    fractions = _region_positive_fractions(sp, mask, n)
    return (fractions > 0.0).astype(np.float64)


def make_regression_targets(
    sp: SuperpixelMap, mask: BinaryMask, n: int | None = None
) -> np.ndarray:
    """Per-node target: fraction of the region's pixels that are positive."""
    n = sp.n_regions if n is None else n
    return _region_positive_fractions(sp, mask, n)


def with_targets(
    g: FieldGraph, sp: SuperpixelMap, mask: BinaryMask, task: str
) -> FieldGraph:
    """Return a copy of g with targets derived from mask for the given task."""
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    if sp.n_regions != g.n_real:
        raise InvariantError(
            f"superpixel map has {sp.n_regions} regions, graph has {g.n_real}"
        )
    if task == "classification":
        targets = make_classification_targets(sp, mask, g.n)
    else:
        targets = make_regression_targets(sp, mask, g.n)
    return replace(g, targets=targets, task=task)


def _f32_exact(arr: np.ndarray) -> list:
    """Round to 32-bit floats, widened back so json emits their exact value."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64).tolist()


def save_graph(g: FieldGraph, path: str | Path) -> None:
    """Write a graph as schema_version 1 JSON. The task must be set."""
    if g.task not in TASKS:
        raise ValueError("graph task must be set before saving")
    g.validate()
    doc = {
        "schema_version": _SCHEMA_VERSION,
        "n": g.n,
        "n_real": g.n_real,
        "task": g.task,
        "source_id": g.source_id,
        "features": _f32_exact(g.features),
        "adjacency": _f32_exact(g.adjacency),
        "targets": _f32_exact(g.targets),
        "valid_mask": g.valid_mask.astype(int).tolist(),
        "centroids": _f32_exact(g.centroids),
    }
    Path(path).write_text(json.dumps(doc))


def load_graph(path: str | Path) -> FieldGraph:
    """Read a graph file, checking the schema and every invariant."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not _REQUIRED_KEYS.issubset(doc):
        missing = _REQUIRED_KEYS - set(doc) if isinstance(doc, dict) else _REQUIRED_KEYS
        raise FormatError(f"{path}: missing keys {sorted(missing)}")
    if doc["schema_version"] != _SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema_version {doc['schema_version']!r}")
    try:
        n = int(doc["n"])
        g = FieldGraph(
            n=n,
            n_real=int(doc["n_real"]),
            features=_as_float_array(doc["features"], (n, FEATURE_DIM), path),
            adjacency=_as_float_array(doc["adjacency"], (n, n), path),
            targets=_as_float_array(doc["targets"], (n,), path),
            valid_mask=np.asarray(doc["valid_mask"], dtype=np.uint8),
            centroids=_as_float_array(doc["centroids"], (n, 2), path),
            task=doc["task"],
            source_id=str(doc["source_id"]),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (InvariantError, FormatError)):
            raise
        raise FormatError(f"{path}: malformed field: {exc}") from exc
    g.validate()
    return g


def _as_float_array(value: object, shape: tuple[int, ...], path: Path) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise FormatError(f"{path}: array shape {arr.shape} != {shape}")
    return arr
