"""Raster types, nearest-neighbour resampling and the synthetic RGB-D scene generator.

Rasters are plain numpy arrays:

* RGB image: ``(H, W, 3)`` float64 in ``[0, 1]``
* depth map: ``(H, W)`` float64, ``0`` marks a missing measurement
* label / pseudo-label map: ``(H, W)`` int64, ``IGNORE`` (255) marks unlabeled pixels

Segment maps carry their segment count, so they get a small dataclass.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

IGNORE = 255
NONE = IGNORE  # pseudo-label "no class" (all-zero one-hot)
MISSING_DEPTH = 0.0


class InvalidSpec(ValueError):
    pass


class InvalidSize(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass
class SegmentMap:
    """Per-pixel segment indices in ``{0..count}``; ``0`` means "no segment"."""

    data: np.ndarray
    count: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.data.ndim != 2:
            raise ValueError("segment map must be 2-D")
        self.count = int(self.count)

    @classmethod
    def from_indices(cls, data) -> "SegmentMap":
        """Build a map from arbitrary non-negative indices, compacting them to ``1..K``."""
        return compact(np.asarray(data))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def validate(self) -> None:
        d = self.data
        if d.size and (d.min() < 0 or d.max() > self.count):
            raise ValueError("segment index out of range")
        present = np.unique(d[d > 0])
        if present.size != self.count:
            raise ValueError("segment indices are not compact")

    def __eq__(self, other):
        if not isinstance(other, SegmentMap):
            return NotImplemented
        return self.count == other.count and np.array_equal(self.data, other.data)


def compact(indices: np.ndarray) -> SegmentMap:
    """Relabel positive indices to ``1..K`` preserving their relative order; 0 stays 0."""
    indices = np.asarray(indices, dtype=np.int64)
    values, inverse = np.unique(indices, return_inverse=True)
    inverse = inverse.reshape(indices.shape)
    if values.size and values[0] == 0:
        return SegmentMap(inverse, values.size - 1)
    return SegmentMap(inverse + 1, values.size)


@dataclass
class SceneSample:
    image: np.ndarray
    depth: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("image must be (H, W, 3)")
        if self.image.shape[0] < 1 or self.image.shape[1] < 1:
            raise ValueError("image must be non-empty")
        if self.depth.shape != self.image.shape[:2]:
            raise DimensionMismatch(
                f"depth {self.depth.shape} does not match image {self.image.shape[:2]}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.depth.shape:
                raise DimensionMismatch(
                    f"labels {self.labels.shape} do not match image {self.image.shape[:2]}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


# -- resampling -------------------------------------------------------------

def nearest_rows_cols(h: int, w: int, new_h: int, new_w: int) -> tuple[np.ndarray, np.ndarray]:
    """Source row/column of every output pixel under pixel-centre nearest-neighbour sampling."""
    if not (1 <= new_h <= h and 1 <= new_w <= w):
        raise InvalidSize(f"cannot downsample {h}x{w} to {new_h}x{new_w}")
    rows = np.floor((np.arange(new_h) + 0.5) * h / new_h).astype(np.int64)
    cols = np.floor((np.arange(new_w) + 0.5) * w / new_w).astype(np.int64)
    return rows, cols


def resample_nearest(raster: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    rows, cols = nearest_rows_cols(raster.shape[0], raster.shape[1], new_h, new_w)
    return raster[rows[:, None], cols[None, :]]


def downsample_segments(seg: SegmentMap, new_h: int, new_w: int) -> SegmentMap:
    """Nearest-neighbour downsampling; segments that lose every pixel are dropped."""
    return compact(resample_nearest(seg.data, new_h, new_w))


# -- synthetic scenes ---------------------------------------------------------

DEFAULT_LAYERS = ((14.0, 0.6), (24.0, 0.8), (36.0, 1.0), (50.0, 1.2))


@dataclass
class SceneSpec:
    """Parameters of the synthetic source/target benchmark.

    Class 0 is the background "stuff" class filling a far plane; objects take
    classes ``1..class_count-1``.  Every scene is lit by a linear brightness
    ramp of amplitude ``shading`` in a random direction.  ``palette_shift`` blends each class colour in
    the target domain towards the next class's source colour, so 0 means no
    shift and 0.5 makes neighbouring classes indistinguishable by mean colour.
    """

    width: int = 64
    height: int = 64
    num_objects: int = 5
    class_count: int = 4
    palette_shift: float = 0.35
    depth_layers: tuple[tuple[float, float], ...] = DEFAULT_LAYERS
    seed: int = 0
    background_depth: float = 80.0
    shading: float = 0.35
    object_jitter: float = 0.06
    pixel_noise: float = 0.06
    missing_frac: float = 0.02
    min_size: int = 8
    max_size: int = 22
    palette: tuple[tuple[float, float, float], ...] | None = field(default=None)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidSpec("scene dimensions must be positive")
        if self.class_count < 2:
            raise InvalidSpec("class_count must be at least 2")
        if self.num_objects < 0:
            raise InvalidSpec("num_objects must be non-negative")
        if not 0.0 <= self.palette_shift <= 1.0:
            raise InvalidSpec("palette_shift must lie in [0, 1]")
        if self.num_objects and not self.depth_layers:
            raise InvalidSpec("objects need at least one depth layer")
        for depth, jitter in self.depth_layers:
            if depth - jitter <= 0 or jitter < 0:
                raise InvalidSpec("depth layers must stay strictly positive")
        if not 0.0 <= self.shading < 1.0:
            raise InvalidSpec("shading must lie in [0, 1)")
        if not 0.0 <= self.missing_frac < 1.0:
            raise InvalidSpec("missing_frac must lie in [0, 1)")
        if not 1 <= self.min_size <= self.max_size:
            raise InvalidSpec("object size range is empty")
        if self.palette is not None and len(self.palette) != self.class_count:
            raise InvalidSpec("palette needs one colour per class")


def source_palette(spec: SceneSpec) -> np.ndarray:
    if spec.palette is not None:
        return np.asarray(spec.palette, dtype=np.float64)
    # Hues evenly spread on the colour wheel keep classes separable in the source domain.
    rng = np.random.default_rng([spec.seed, 0x9A1E77E])
    hues = (np.arange(spec.class_count) / spec.class_count + rng.uniform(0, 1)) % 1.0
    value = rng.uniform(0.55, 0.8, spec.class_count)
    sat = rng.uniform(0.5, 0.8, spec.class_count)
    return _hsv_to_rgb(hues, sat, value)


def target_palette(spec: SceneSpec) -> np.ndarray:
    src = source_palette(spec)
    s = spec.palette_shift
    return (1.0 - s) * src + s * np.roll(src, -1, axis=0)


def _hsv_to_rgb(h, s, v) -> np.ndarray:
    return np.array([colorsys.hsv_to_rgb(*hsv) for hsv in zip(h, s, v)])


def _render_scene(spec: SceneSpec, palette: np.ndarray, rng: np.random.Generator) -> SceneSample:
    H, W = spec.height, spec.width
    labels = np.zeros((H, W), dtype=np.int64)
    depth = np.full((H, W), spec.background_depth)
    base = np.broadcast_to(palette[0], (H, W, 3)).copy()
    base += rng.normal(0.0, spec.object_jitter, 3)

    objects = []
    for _ in range(spec.num_objects):
        cls = int(rng.integers(1, spec.class_count)) if spec.class_count > 2 else 1
        layer_depth, jitter = spec.depth_layers[int(rng.integers(len(spec.depth_layers)))]
        d = layer_depth + rng.uniform(-jitter, jitter)
        oh, ow = rng.integers(spec.min_size, spec.max_size + 1, 2)
        oh, ow = min(int(oh), H), min(int(ow), W)
        top = int(rng.integers(0, H - oh + 1))
        left = int(rng.integers(0, W - ow + 1))
        ellipse = bool(rng.integers(2))
        color = palette[cls] + rng.normal(0.0, spec.object_jitter, 3)
        objects.append((d, cls, top, left, oh, ow, ellipse, color))

    # far to near, so nearer objects occlude
    yy, xx = np.mgrid[0:H, 0:W]
    for d, cls, top, left, oh, ow, ellipse, color in sorted(objects, key=lambda o: -o[0]):
        if ellipse:
            cy, cx = top + (oh - 1) / 2, left + (ow - 1) / 2
            mask = ((yy - cy) / (oh / 2)) ** 2 + ((xx - cx) / (ow / 2)) ** 2 <= 1.0
        else:
            mask = (yy >= top) & (yy < top + oh) & (xx >= left) & (xx < left + ow)
        labels[mask] = cls
        depth[mask] = d
        base[mask] = color

    # smooth illumination ramp, same statistics in both domains
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ys = (yy - (H - 1) / 2) / max(H - 1, 1) * 2
    xs = (xx - (W - 1) / 2) / max(W - 1, 1) * 2
    ramp = (np.cos(angle) * xs + np.sin(angle) * ys) / np.sqrt(2)
    gain = 1.0 + spec.shading * ramp
    image = np.clip(base * gain[..., None] + rng.normal(0.0, spec.pixel_noise, (H, W, 3)), 0.0, 1.0)
    if spec.missing_frac > 0:
        depth[rng.random((H, W)) < spec.missing_frac] = MISSING_DEPTH
    return SceneSample(image, depth, labels)


def generate_scenes(spec: SceneSpec, n: int, domain: str) -> list[SceneSample]:
    """Scenes ``0..n-1`` of one domain; scene ``i`` does not depend on ``n``."""
    spec.validate()
    if domain not in ("source", "target"):
        raise InvalidSpec(f"unknown domain {domain!r}")
    palette = source_palette(spec) if domain == "source" else target_palette(spec)
    stream = 1 if domain == "source" else 2
    return [_render_scene(spec, palette, np.random.default_rng([spec.seed, stream, i]))
            for i in range(n)]


def generate_scene_pair(spec: SceneSpec, n_source: int, n_target: int):
    return generate_scenes(spec, n_source, "source"), generate_scenes(spec, n_target, "target")


def pixel_features(image: np.ndarray) -> np.ndarray:
    """Per-pixel feature vectors ``(H, W, 8)``: RGB, x/y in [-1, 1], 3x3 mean RGB."""
    H, W, _ = image.shape
    ys = np.linspace(-1.0, 1.0, H) if H > 1 else np.zeros(1)
    xs = np.linspace(-1.0, 1.0, W) if W > 1 else np.zeros(1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    mean = uniform_filter(image, size=(3, 3, 1), mode="nearest")
    return np.concatenate([image, xx[..., None], yy[..., None], mean], axis=2)
