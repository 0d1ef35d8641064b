"""PNG encode/decode for scenes, label maps and segment maps.

File conventions:

* RGB: 8-bit RGB PNG
* depth: 16-bit grayscale PNG, depth = raw * depth_scale, raw 0 = missing
* labels / pseudo-labels: 8-bit grayscale PNG, 255 = IGNORE / NONE
* segment maps: 16-bit grayscale PNG (raw16) or colourised RGB preview
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .scene import DimensionMismatch, SceneSample, SegmentMap, compact

DEFAULT_DEPTH_SCALE = 1.0 / 256.0

_MASK64 = (1 << 64) - 1


class MissingFile(FileNotFoundError):
    pass


class DecodeError(ValueError):
    pass


class IoError(OSError):
    pass


def _open(path) -> Image.Image:
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return img


def _save(img: Image.Image, path) -> None:
    try:
        img.save(path, format="PNG")
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_rgb(path) -> np.ndarray:
    img = _open(path)
    if img.mode not in ("RGB", "RGBA", "L", "P"):
        raise DecodeError(f"{path}: expected an 8-bit RGB image, got mode {img.mode}")
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_rgb(image: np.ndarray, path) -> None:
    data = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    _save(Image.fromarray(data, mode="RGB"), path)


def read_u16(path) -> np.ndarray:
    img = _open(path)
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        data = np.asarray(img).astype(np.int64)
    elif img.mode == "L":
        data = np.asarray(img).astype(np.int64)
    else:
        raise DecodeError(f"{path}: expected a grayscale image, got mode {img.mode}")
    if data.min(initial=0) < 0 or data.max(initial=0) > 0xFFFF:
        raise DecodeError(f"{path}: values outside the 16-bit range")
    return data


def write_u16(data: np.ndarray, path) -> None:
    data = np.asarray(data)
    if data.min(initial=0) < 0 or data.max(initial=0) > 0xFFFF:
        raise ValueError("values do not fit in 16 bits")
    _save(Image.fromarray(data.astype(np.uint16)), path)


def read_depth(path, depth_scale: float = DEFAULT_DEPTH_SCALE) -> np.ndarray:
    return read_u16(path).astype(np.float64) * depth_scale


def write_depth(depth: np.ndarray, path, depth_scale: float = DEFAULT_DEPTH_SCALE) -> None:
    raw = np.rint(np.asarray(depth) / depth_scale)
    if raw.max(initial=0) > 0xFFFF:
        raise ValueError("depth exceeds the 16-bit range at this depth scale")
    # keep valid depths distinguishable from "missing" after quantisation
    raw[(raw == 0) & (np.asarray(depth) > 0)] = 1
    write_u16(raw.astype(np.int64), path)


def read_labels(path) -> np.ndarray:
    img = _open(path)
    if img.mode not in ("L", "P"):
        raise DecodeError(f"{path}: expected an 8-bit grayscale label map, got mode {img.mode}")
    return np.asarray(img, dtype=np.int64)


def write_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("label values must fit in 8 bits")
    _save(Image.fromarray(labels.astype(np.uint8), mode="L"), path)


def load_scene(image_path, depth_path, label_path=None,
               depth_scale: float = DEFAULT_DEPTH_SCALE) -> SceneSample:
    image = read_rgb(image_path)
    depth = read_depth(depth_path, depth_scale)
    labels = read_labels(label_path) if label_path is not None else None
    if depth.shape != image.shape[:2]:
        raise DimensionMismatch(f"depth {depth.shape} vs image {image.shape[:2]}")
    if labels is not None and labels.shape != image.shape[:2]:
        raise DimensionMismatch(f"labels {labels.shape} vs image {image.shape[:2]}")
    return SceneSample(image, depth, labels)


def save_scene(scene: SceneSample, stem, depth_scale: float = DEFAULT_DEPTH_SCALE) -> None:
    """Write ``<stem>_rgb.png``, ``<stem>_depth.png`` and, if present, ``<stem>_label.png``."""
    stem = str(stem)
    write_rgb(scene.image, stem + "_rgb.png")
    write_depth(scene.depth, stem + "_depth.png", depth_scale)
    if scene.labels is not None:
        write_labels(scene.labels, stem + "_label.png")


# -- segment maps -------------------------------------------------------------

def mix64(x: int) -> int:
    """64-bit integer finaliser used for the segment colour palette."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def segment_color(index: int) -> tuple[int, int, int]:
    if index == 0:
        return (0, 0, 0)
    v = mix64(index) & 0xFFFFFF
    return ((v >> 16) & 0xFF, (v >> 8) & 0xFF, v & 0xFF)


def colorize_segments(seg: SegmentMap) -> np.ndarray:
    lut = np.array([segment_color(i) for i in range(seg.count + 1)], dtype=np.uint8)
    return lut[seg.data]


def save_segment_map(seg: SegmentMap, path, mode: str = "raw16") -> None:
    if mode == "raw16":
        if seg.count > 0xFFFF:
            raise ValueError("too many segments for a 16-bit map")
        write_u16(seg.data, path)
    elif mode == "colorized":
        _save(Image.fromarray(colorize_segments(seg), mode="RGB"), path)
    else:
        raise ValueError(f"unknown segment map mode {mode!r}")


def load_segment_map(path) -> SegmentMap:
    data = read_u16(path)
    present = np.unique(data[data > 0])
    count = int(present.size)
    if count and present[-1] != count:
        # not compact on disk; fall back to compaction
        return compact(data)
    return SegmentMap(data, count)
