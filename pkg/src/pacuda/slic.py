"""SLIC superpixels: localized k-means over CIELAB colour and pixel position."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from skimage.color import rgb2lab
from skimage.measure import label as connected_components

from .scene import SegmentMap, compact


class EmptyImage(ValueError):
    pass


@dataclass
class SlicParams:
    k_s: int = 25
    compactness: float = 30.0
    max_iters: int = 10
    min_segment_frac: float = 0.25

    def validate(self, n_pixels: int | None = None) -> None:
        if self.k_s < 1:
            raise ValueError("k_s must be at least 1")
        if n_pixels is not None and self.k_s > n_pixels:
            raise ValueError(f"k_s={self.k_s} exceeds the pixel count {n_pixels}")
        if not self.compactness > 0:
            raise ValueError("compactness must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if not 0.0 <= self.min_segment_frac < 1.0:
            raise ValueError("min_segment_frac must lie in [0, 1)")


def seed_grid(h: int, w: int, k_s: int) -> tuple[int, int]:
    """Rows and columns of the initial seed grid, close to ``k_s`` seeds with square cells."""
    n_rows = max(1, min(h, math.floor(math.sqrt(k_s * h / w) + 0.5)))
    n_cols = max(1, min(w, math.floor(k_s / n_rows + 0.5)))
    return n_rows, n_cols


def _gradient_energy(lab: np.ndarray) -> np.ndarray:
    p = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dx = p[1:-1, 2:] - p[1:-1, :-2]
    dy = p[2:, 1:-1] - p[:-2, 1:-1]
    return (dx ** 2).sum(-1) + (dy ** 2).sum(-1)


def _initial_centers(lab: np.ndarray, k_s: int) -> np.ndarray:
    h, w, _ = lab.shape
    n_rows, n_cols = seed_grid(h, w, k_s)
    grad = _gradient_energy(lab)
    centers = []
    for i in range(n_rows):
        for j in range(n_cols):
            # pixel-centre grid positions; may be fractional
            y = (i + 0.5) * h / n_rows - 0.5
            x = (j + 0.5) * w / n_cols - 0.5
            py, px = int(math.floor(y + 0.5)), int(math.floor(x + 0.5))
            best = grad[py, px]
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    qy, qx = py + dy, px + dx
                    if 0 <= qy < h and 0 <= qx < w and grad[qy, qx] < best:
                        best = grad[qy, qx]
                        y, x = float(qy), float(qx)
            cy, cx = int(math.floor(y + 0.5)), int(math.floor(x + 0.5))
            centers.append([y, x, *lab[cy, cx]])
    return np.array(centers, dtype=np.float64)


def _assign(lab, centers, step, compactness, labels):
    """Nearest centre within each centre's 2S x 2S window; ties go to the lower index."""
    h, w, _ = lab.shape
    best = np.full((h, w), np.inf)
    new = np.full((h, w), -1, dtype=np.int64)
    weight = (compactness / step) ** 2
    for k, (cy, cx, *color) in enumerate(centers):
        y0, y1 = max(0, math.ceil(cy - step)), min(h, math.floor(cy + step) + 1)
        x0, x1 = max(0, math.ceil(cx - step)), min(w, math.floor(cx + step) + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        ys = np.arange(y0, y1)[:, None]
        xs = np.arange(x0, x1)[None, :]
        d = ((lab[y0:y1, x0:x1] - color) ** 2).sum(-1) + weight * ((ys - cy) ** 2 + (xs - cx) ** 2)
        closer = d < best[y0:y1, x0:x1]
        best[y0:y1, x0:x1][closer] = d[closer]
        new[y0:y1, x0:x1][closer] = k
    uncovered = new < 0
    if uncovered.any():
        if labels is not None:
            new[uncovered] = labels[uncovered]
        else:
            # first pass only: fall back to the globally nearest centre
            ys, xs = np.nonzero(uncovered)
            d = ((lab[ys, xs][:, None, :] - centers[None, :, 2:]) ** 2).sum(-1)
            d += weight * ((ys[:, None] - centers[None, :, 0]) ** 2 + (xs[:, None] - centers[None, :, 1]) ** 2)
            new[ys, xs] = np.argmin(d, axis=1)
    return new


def slic_segment(image: np.ndarray, params: SlicParams | None = None) -> SegmentMap:
    params = params or SlicParams()
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise EmptyImage("image must be a non-empty (H, W, 3) array")
    h, w, _ = image.shape
    params.validate(h * w)

    lab = rgb2lab(np.clip(image, 0.0, 1.0))
    step = math.sqrt(h * w / params.k_s)
    centers = _initial_centers(lab, params.k_s)

    yy, xx = np.mgrid[0:h, 0:w]
    feats = np.column_stack([yy.ravel(), xx.ravel(), lab.reshape(-1, 3)]).astype(np.float64)
    labels = None
    for _ in range(max(1, params.max_iters)):
        labels = _assign(lab, centers, step, params.compactness, labels)
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=len(centers)).astype(np.float64)
        sums = np.stack([np.bincount(flat, weights=feats[:, j], minlength=len(centers))
                         for j in range(feats.shape[1])], axis=1)
        occupied = counts > 0
        updated = centers.copy()
        updated[occupied] = sums[occupied] / counts[occupied, None]
        moved = np.hypot(updated[:, 0] - centers[:, 0], updated[:, 1] - centers[:, 1]).max()
        centers = updated
        if moved < 1e-3 * step:
            break

    min_size = params.min_segment_frac * h * w / params.k_s
    return enforce_connectivity(SegmentMap(labels.reshape(h, w) + 1, len(centers)), min_size)


def enforce_connectivity(seg: SegmentMap, min_size: float) -> SegmentMap:
    """Split segments into 4-connected components and merge components below ``min_size``.

    A small component joins the largest 4-adjacent component (ties: lowest
    component label).  Components are visited smallest first, in raster order
    among equal sizes, with sizes updated as merges happen.  Pixels with index
    0 are left alone and never absorb or get absorbed.
    """
    data = seg.data
    comp = connected_components(data, background=0, connectivity=1)
    n = int(comp.max())
    if n == 0:
        return compact(comp)
    sizes = np.bincount(comp.ravel(), minlength=n + 1)

    neighbours: list[set[int]] = [set() for _ in range(n + 1)]
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        m = (a != b) & (a > 0) & (b > 0)
        for u, v in set(zip(a[m].tolist(), b[m].tolist())):
            neighbours[u].add(v)
            neighbours[v].add(u)

    parent = np.arange(n + 1)
    order = sorted(range(1, n + 1), key=lambda c: (sizes[c], c))
    for c in order:
        if sizes[c] >= min_size or not neighbours[c]:
            continue
        target = min(neighbours[c], key=lambda o: (-sizes[o], o))
        parent[c] = target
        sizes[target] += sizes[c]
        sizes[c] = 0
        for o in neighbours[c]:
            if o != target:
                neighbours[o].discard(c)
                neighbours[o].add(target)
                neighbours[target].add(o)
        neighbours[target].discard(c)
        neighbours[c] = set()

    # resolve merge chains to their final root
    for c in range(1, n + 1):
        r = c
        while parent[r] != r:
            r = parent[r]
        parent[c] = r
    merged = parent[comp]
    # number segments by first appearance in raster order
    flat = merged.ravel()
    roots, first = np.unique(flat, return_index=True)
    rank = np.zeros(n + 1, dtype=np.int64)
    keep = roots > 0
    by_position = roots[keep][np.argsort(first[keep])]
    rank[by_position] = np.arange(1, by_position.size + 1)
    return SegmentMap(rank[merged], by_position.size)
