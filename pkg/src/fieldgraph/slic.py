"""SLIC superpixel segmentation on CIE L*a*b* images.

Local k-means over (L, a, b, x, y) with the combined distance

    D^2 = d_lab^2 + (m / S)^2 * d_xy^2

where S = sqrt(w * h / k) is the expected superpixel spacing and m is the
compactness weight. Seeds start on a regular grid, are nudged to the lowest
gradient position in their 3x3 neighborhood, and each cluster only competes
for pixels inside a 2S x 2S window around its center. Assignment scans
clusters in ascending id with strict improvement, so ties break toward the
lower id and runs are reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import FormatError, InvariantError
from .raster_io import LabImage

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)


@dataclass(frozen=True)
class SuperpixelMap:
    """Label raster partitioning an image into contiguous region ids.

    Labels are int32 in [0, n_regions) and every id is non-empty.
    """

    width: int
    height: int
    labels: np.ndarray
    n_regions: int

    def __post_init__(self) -> None:
        if self.labels.shape != (self.height, self.width):
            raise InvariantError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.height}x{self.width}"
            )
        counts = np.bincount(self.labels.ravel(), minlength=self.n_regions)
        if self.labels.min() < 0 or self.labels.max() != self.n_regions - 1:
            raise InvariantError("label ids must be contiguous from 0")
        if (counts[: self.n_regions] == 0).any():
            raise InvariantError("every region id must own at least one pixel")


@dataclass(frozen=True)
class SuperpixelRegion:
    """One region: pixel coordinates, centroid in (x, y) order, and area."""

    id: int
    pixels: np.ndarray  # (area, 2) of (row, col)
    centroid: tuple[float, float]
    area: int


@dataclass
class SlicState:
    """Raw k-means output before label compaction.

    residuals holds the total squared assignment distance after each
    assignment step; it is non-increasing across iterations.
    """

    labels: np.ndarray
    centers: np.ndarray  # (k, 5) columns x, y, L, a, b
    residuals: list[float] = field(default_factory=list)


def default_min_area(width: int, height: int, k: int) -> float:
    """Minimum region area used when stitching orphan fragments."""
    return (width * height / k) / 4.0


def _seed_positions(width: int, height: int, k: int) -> np.ndarray:
    """First k cell centers of a near-square grid covering the image."""
    ny = min(max(int(round(math.sqrt(k * height / width))), 1), height)
    nx = min(max(math.ceil(k / ny), 1), width)
    if nx * ny < k:
        ny = min(math.ceil(k / nx), height)
    xs = ((np.arange(nx) + 0.5) * width / nx).astype(np.int64)
    ys = ((np.arange(ny) + 0.5) * height / ny).astype(np.int64)
    grid = np.stack(
        [np.tile(xs, ny), np.repeat(ys, nx)], axis=1
    )
    return grid[:k]


def _gradient_map(lab: np.ndarray) -> np.ndarray:
    """Squared color gradient; border pixels get +inf so seeds avoid them."""
    h, w = lab.shape[:2]
    grad = np.full((h, w), np.inf)
    if h > 2 and w > 2:
        gx = lab[1:-1, 2:] - lab[1:-1, :-2]
        gy = lab[2:, 1:-1] - lab[:-2, 1:-1]
        grad[1:-1, 1:-1] = (gx * gx).sum(axis=2) + (gy * gy).sum(axis=2)
    return grad


def _init_seeds(lab: np.ndarray, k: int) -> np.ndarray:
    """Grid seeds perturbed to the lowest-gradient spot in their 3x3 patch.

    A seed only moves on strict gradient improvement and never onto a
    position occupied by another seed, so distinct seeds stay distinct.
    """
    h, w = lab.shape[:2]
    positions = _seed_positions(w, h, k)
    grad = _gradient_map(lab)
    occupied = {(int(x), int(y)) for x, y in positions}
    centers = np.empty((k, 5))
    for i, (x, y) in enumerate(positions):
        bx, by = int(x), int(y)
        best = grad[by, bx]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny_, nx_ = int(y) + dy, int(x) + dx
                if 0 <= ny_ < h and 0 <= nx_ < w and grad[ny_, nx_] < best:
                    if (nx_, ny_) not in occupied or (nx_, ny_) == (bx, by):
                        best = grad[ny_, nx_]
                        bx, by = nx_, ny_
        if (bx, by) != (int(x), int(y)):
            occupied.discard((int(x), int(y)))
            occupied.add((bx, by))
        centers[i] = (bx, by, *lab[by, bx])
    return centers


def slic_kmeans(img: LabImage, k: int, compactness: float, max_iter: int = 10) -> SlicState:
    """Run the windowed k-means and return labels, centers, and residuals."""
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise ValueError(f"k must be an integer, got {k!r}")
    h, w = img.height, img.width
    if k < 1 or k > w * h:
        raise ValueError(f"k={k} out of range [1, {w * h}]")
    if compactness <= 0:
        raise ValueError(f"compactness must be positive, got {compactness}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")

    lab = img.data
    s = math.sqrt(w * h / k)
    inv_s2 = (compactness / s) ** 2
    half = max(1, math.ceil(s))

    xgrid, ygrid = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    centers = _init_seeds(lab, k)
    labels = np.full((h, w), -1, dtype=np.int32)
    residuals: list[float] = []

    for iteration in range(max_iter):
        if iteration == 0:
            best = np.full((h, w), np.inf)
        else:
            # Keep the current assignment as the baseline candidate so every
            # pixel stays covered and the objective cannot increase.
            cur = centers[labels]
            dc = lab - cur[..., 2:5]
            dx = xgrid - cur[..., 0]
            dy = ygrid - cur[..., 1]
            best = (dc * dc).sum(axis=2) + inv_s2 * (dx * dx + dy * dy)

        for ci in range(k):
            cx, cy = centers[ci, 0], centers[ci, 1]
            x0 = max(int(cx) - half, 0)
            x1 = min(int(cx) + half + 1, w)
            y0 = max(int(cy) - half, 0)
            y1 = min(int(cy) + half + 1, h)
            if x0 >= x1 or y0 >= y1:
                continue
            win = lab[y0:y1, x0:x1]
            dc = win - centers[ci, 2:5]
            dlab = (dc * dc).sum(axis=2)
            wx = np.arange(x0, x1, dtype=np.float64) - cx
            wy = np.arange(y0, y1, dtype=np.float64) - cy
            d = dlab + inv_s2 * (wx[None, :] ** 2 + wy[:, None] ** 2)
            sub = best[y0:y1, x0:x1]
            improved = d < sub
            sub[improved] = d[improved]
            labels[y0:y1, x0:x1][improved] = ci

        uncovered = labels < 0
        if uncovered.any():
            rows, cols = np.nonzero(uncovered)
            pix = lab[rows, cols]
            dc = pix[:, None, :] - centers[None, :, 2:5]
            dxy = (cols[:, None] - centers[None, :, 0]) ** 2 + (
                rows[:, None] - centers[None, :, 1]
            ) ** 2
            dist = (dc * dc).sum(axis=2) + inv_s2 * dxy
            labels[rows, cols] = np.argmin(dist, axis=1).astype(np.int32)
            best[rows, cols] = dist[np.arange(len(rows)), labels[rows, cols]]

        residuals.append(float(best.sum()))

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        nonempty = counts > 0
        sums = np.empty((k, 5))
        sums[:, 0] = np.bincount(flat, weights=xgrid.ravel(), minlength=k)
        sums[:, 1] = np.bincount(flat, weights=ygrid.ravel(), minlength=k)
        for c in range(3):
            sums[:, 2 + c] = np.bincount(flat, weights=lab[..., c].ravel(), minlength=k)
        new_centers = centers.copy()
        new_centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        centers = new_centers

    return SlicState(labels=labels, centers=centers, residuals=residuals)


def slic_segment(
    img: LabImage, k: int, compactness: float, max_iter: int = 10
) -> SuperpixelMap:
    """Segment an image into at most k superpixels.

    Empty clusters are dropped and labels compacted to a contiguous range,
    so n_regions can fall below k on degenerate inputs.
    """
    state = slic_kmeans(img, k, compactness, max_iter)
    uniq, compact = np.unique(state.labels, return_inverse=True)
    labels = compact.reshape(state.labels.shape).astype(np.int32)
    return SuperpixelMap(
        width=img.width, height=img.height, labels=labels, n_regions=len(uniq)
    )


def _component_map(labels: np.ndarray, n_regions: int) -> tuple[np.ndarray, int]:
    """Split every label into its 4-connected components with global ids."""
    comp = np.full(labels.shape, -1, dtype=np.int64)
    n_comp = 0
    slices = ndimage.find_objects(labels + 1)
    for rid in range(n_regions):
        sl = slices[rid]
        if sl is None:
            continue
        region_mask = labels[sl] == rid
        sub, count = ndimage.label(region_mask, structure=_FOUR_CONNECTED)
        view = comp[sl]
        view[region_mask] = sub[region_mask] - 1 + n_comp
        n_comp += count
    return comp, n_comp


def enforce_connectivity(sp: SuperpixelMap, min_area: float) -> SuperpixelMap:
    """Make every region 4-connected and absorb undersized fragments.

    Each connected component below min_area is merged into its largest
    adjacent region (ties to the lower id). Components with no neighbor,
    meaning the map is a single region, are left alone. Output labels are
    re-compacted in raster order of first appearance.
    """
    comp, n_comp = _component_map(sp.labels, sp.n_regions)
    areas = np.bincount(comp.ravel(), minlength=n_comp).tolist()

    neighbors: list[set[int]] = [set() for _ in range(n_comp)]
    right = np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1)
    down = np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1)
    pairs = np.concatenate([right, down])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    for a, b in np.unique(pairs, axis=0):
        neighbors[a].add(int(b))
        neighbors[b].add(int(a))

    parent = list(range(n_comp))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    changed = True
    while changed:
        changed = False
        roots = sorted({find(i) for i in range(n_comp)})
        for r in sorted(roots, key=lambda i: (areas[i], i)):
            if find(r) != r or areas[r] >= min_area:
                continue
            adjacent = {find(x) for x in neighbors[r]} - {r}
            if not adjacent:
                continue
            target = max(adjacent, key=lambda c: (areas[c], -c))
            parent[r] = target
            areas[target] += areas[r]
            neighbors[target] |= neighbors[r]
            changed = True

    root_of = np.fromiter((find(i) for i in range(n_comp)), dtype=np.int64, count=n_comp)
    rooted = root_of[comp]
    uniq, first_index = np.unique(rooted, return_index=True)
    order = np.argsort(np.argsort(first_index))
    rank = np.empty(int(uniq.max()) + 1, dtype=np.int32)
    rank[uniq] = order.astype(np.int32)
    labels = rank[rooted]
    return SuperpixelMap(
        width=sp.width, height=sp.height, labels=labels, n_regions=len(uniq)
    )


def extract_regions(sp: SuperpixelMap) -> list[SuperpixelRegion]:
    """List regions ordered by id with pixel coordinates and centroids."""
    flat = sp.labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=sp.n_regions)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    rows = order // sp.width
    cols = order % sp.width
    regions = []
    for rid in range(sp.n_regions):
        lo, hi = bounds[rid], bounds[rid + 1]
        r = rows[lo:hi]
        c = cols[lo:hi]
        regions.append(
            SuperpixelRegion(
                id=rid,
                pixels=np.stack([r, c], axis=1),
                centroid=(float(c.mean()), float(r.mean())),
                area=int(hi - lo),
            )
        )
    return regions


def save_superpixels(sp: SuperpixelMap, path: str | Path) -> None:
    """Write labels as 16-bit grayscale PNG plus a JSON sidecar."""
    path = Path(path)
    if sp.n_regions > 65536:
        raise ValueError(f"{sp.n_regions} regions exceed 16-bit label range")
    Image.fromarray(sp.labels.astype(np.uint16)).save(path, format="PNG")
    sidecar = {
        "schema_version": 1,
        "width": sp.width,
        "height": sp.height,
        "n_regions": sp.n_regions,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar))


def load_superpixels(path: str | Path) -> SuperpixelMap:
    """Load a label raster written by save_superpixels."""
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    if not path.exists() or not sidecar_path.exists():
        raise FileNotFoundError(str(path))
    try:
        meta = json.loads(sidecar_path.read_text())
        width, height = int(meta["width"]), int(meta["height"])
        n_regions = int(meta["n_regions"])
        if meta.get("schema_version") != 1:
            raise FormatError(f"{sidecar_path}: unsupported schema_version")
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{sidecar_path}: malformed sidecar: {exc}") from exc
    with Image.open(path) as img:
        labels = np.asarray(img).astype(np.int32)
    return SuperpixelMap(width=width, height=height, labels=labels, n_regions=n_regions)
