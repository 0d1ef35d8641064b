"""Object regions from RGB x depth segment intersections, validated by pseudo-label purity."""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass

import numpy as np
from skimage.measure import label as connected_components

from .scene import NONE, DimensionMismatch, SegmentMap, compact


def fuse_segments(rgb_seg: SegmentMap, depth_seg: SegmentMap,
                  missing_as_segment: bool = False) -> SegmentMap:
    """Intersect two partitions; region ids follow the (rgb, depth) pair order.

    Pixels without an RGB segment, or without a depth segment (missing depth),
    belong to no region unless ``missing_as_segment`` treats missing depth as
    one more depth segment.
    """
    if rgb_seg.shape != depth_seg.shape:
        raise DimensionMismatch(f"rgb {rgb_seg.shape} vs depth {depth_seg.shape}")
    r = rgb_seg.data
    d = depth_seg.data
    if missing_as_segment:
        d = np.where(d == 0, depth_seg.count + 1, d)
    code = r * (depth_seg.count + 2) + d
    return compact(np.where((r > 0) & (d > 0), code, 0))


def pseudo_label_regions(pseudo: np.ndarray) -> SegmentMap:
    """4-connected components of equal pseudo-label; NONE pixels belong to no region."""
    pseudo = np.asarray(pseudo)
    comp = connected_components(np.where(pseudo == NONE, -1, pseudo), background=-1, connectivity=1)
    return compact(comp)


@dataclass
class RegionLabeling:
    """Per-region statistics; arrays are indexed by ``region - 1``."""

    valid: np.ndarray
    label: np.ndarray        # -1 where invalid
    purity: np.ndarray       # 0 for regions without pseudo-labels
    pixel_count: np.ndarray
    pl_pixel_count: np.ndarray

    @property
    def region_count(self) -> int:
        return int(self.valid.size)

    @property
    def valid_regions(self) -> np.ndarray:
        """1-based ids of the valid regions."""
        return np.nonzero(self.valid)[0] + 1

    def write_csv(self, out=None) -> None:
        out = out or sys.stdout
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["region", "valid", "label", "purity", "pixels", "pl_pixels"])
        for k in range(self.region_count):
            writer.writerow([k + 1, int(self.valid[k]), int(self.label[k]),
                             f"{self.purity[k]:.6f}", int(self.pixel_count[k]),
                             int(self.pl_pixel_count[k])])


def label_regions(fused: SegmentMap, pseudo: np.ndarray, class_count: int,
                  tau_p: float) -> RegionLabeling:
    """Majority pseudo-label per region; valid when its share of pseudo-labeled pixels >= tau_p."""
    pseudo = np.asarray(pseudo)
    if pseudo.shape != fused.shape:
        raise DimensionMismatch(f"pseudo-labels {pseudo.shape} vs regions {fused.shape}")
    if not 0.0 < tau_p <= 1.0:
        raise ValueError("tau_p must lie in (0, 1]")
    K = fused.count
    region = fused.data.ravel()
    pl = pseudo.ravel()
    pixel_count = np.bincount(region, minlength=K + 1)[1:]
    use = (region > 0) & (pl != NONE)
    if np.any(pl[use] >= class_count) or np.any(pl[use] < 0):
        raise ValueError("pseudo-label outside 0..C-1")
    freq = np.bincount((region[use] - 1) * class_count + pl[use],
                       minlength=K * class_count).reshape(K, class_count)
    total = freq.sum(axis=1)
    top = freq.max(axis=1, initial=0)
    purity = np.divide(top, total, out=np.zeros(K), where=total > 0)
    valid = (total > 0) & (purity >= tau_p)
    label = np.where(valid, np.argmax(freq, axis=1) if K else np.zeros(0, np.int64), -1)
    return RegionLabeling(valid, label.astype(np.int64), purity, pixel_count, total)


def unique_region_labeling(fused: SegmentMap) -> RegionLabeling:
    """Every non-empty region valid with its own label (no pseudo-labels involved)."""
    K = fused.count
    pixel_count = np.bincount(fused.data.ravel(), minlength=K + 1)[1:]
    return RegionLabeling(np.ones(K, dtype=bool), np.arange(K, dtype=np.int64),
                          np.ones(K), pixel_count, np.zeros(K, dtype=np.int64))
