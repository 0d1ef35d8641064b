"""Depth-histogram peaks and nearest-peak clustering into depth segments."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .scene import SegmentMap, compact


class AllDepthMissing(ValueError):
    pass


@dataclass
class DepthSegParams:
    bins: int = 200
    delta_peak: float = 0.0025

    def validate(self) -> None:
        if self.bins < 2:
            raise ValueError("bins must be at least 2")
        if self.delta_peak < 0:
            raise ValueError("delta_peak must be non-negative")


@dataclass
class DepthHistogram:
    edges: np.ndarray
    mass: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_center", "mass"])
            for c, m in zip(self.centers, self.mass):
                writer.writerow([repr(float(c)), repr(float(m))])


@dataclass
class DepthPeaks:
    bins: np.ndarray
    centers: np.ndarray
    prominences: np.ndarray


def depth_histogram(depth: np.ndarray, bins: int) -> DepthHistogram:
    """Equal-width histogram over the valid (non-zero) depth range, normalised to unit mass."""
    values = np.asarray(depth, dtype=np.float64)
    values = values[values > 0]
    if values.size == 0:
        raise AllDepthMissing("every depth value is missing")
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        pad = max(abs(lo), 1.0) * np.finfo(np.float64).eps * bins
        lo, hi = lo - pad, hi + pad
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return DepthHistogram(edges, counts / values.size)


def _local_maxima(mass: np.ndarray) -> list[int]:
    """Leftmost bin of every plateau whose outside neighbours are strictly lower."""
    n = mass.size
    peaks = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and mass[j + 1] == mass[i]:
            j += 1
        left_ok = i == 0 or mass[i - 1] < mass[i]
        right_ok = j == n - 1 or mass[j + 1] < mass[i]
        if left_ok and right_ok:
            peaks.append(i)
        i = j + 1
    return peaks


def prominence(mass: np.ndarray, i: int) -> float:
    """Height of bin ``i`` above the higher of the two lowest points on its flanks.

    Each flank runs from ``i`` to the nearest strictly higher bin; a flank that
    reaches the end of the histogram without one bottoms out at 0.
    """
    h = mass[i]
    higher_left = np.nonzero(mass[:i] > h)[0]
    left_min = mass[higher_left[-1]:i + 1].min() if higher_left.size else 0.0
    higher_right = np.nonzero(mass[i + 1:] > h)[0]
    right_min = mass[i:i + 2 + higher_right[0]].min() if higher_right.size else 0.0
    return float(h - max(left_min, right_min))


def find_prominent_peaks(hist: DepthHistogram, delta_peak: float) -> DepthPeaks:
    mass = hist.mass
    candidates = _local_maxima(mass)
    proms = [prominence(mass, i) for i in candidates]
    keep = [(i, p) for i, p in zip(candidates, proms) if p >= delta_peak]
    if not keep:
        g = int(np.argmax(mass))
        keep = [(g, prominence(mass, g))]
    bins = np.array([i for i, _ in keep], dtype=np.int64)
    return DepthPeaks(bins, hist.centers[bins], np.array([p for _, p in keep]))


def cluster_by_peaks(depth: np.ndarray, peaks: DepthPeaks | np.ndarray) -> SegmentMap:
    """Assign each valid pixel to its nearest peak centre (ties: lower peak); missing pixels get 0."""
    centers = np.asarray(peaks.centers if isinstance(peaks, DepthPeaks) else peaks, dtype=np.float64)
    if centers.size == 0:
        raise ValueError("need at least one peak")
    depth = np.asarray(depth, dtype=np.float64)
    nearest = np.argmin(np.abs(depth[..., None] - centers), axis=-1) + 1
    return compact(np.where(depth > 0, nearest, 0))


def depth_segment(depth: np.ndarray, params: DepthSegParams | None = None) -> SegmentMap:
    params = params or DepthSegParams()
    params.validate()
    hist = depth_histogram(depth, params.bins)
    return cluster_by_peaks(depth, find_prominent_peaks(hist, params.delta_peak))
