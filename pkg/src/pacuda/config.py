"""Flat ``key = value`` configuration shared by every command.

One entry per line, ``#`` starts a comment.  Keys use snake_case and map onto
SceneSpec, SlicParams, DepthSegParams, ObjLossParams and TrainConfig fields;
on the command line the same keys are spelled ``--k-s``, ``--t-train`` and so on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .depth import DepthSegParams
from .objectness import ObjLossParams
from .scene import SceneSpec
from .slic import SlicParams
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_size(text: str) -> tuple[int, int] | None:
    t = text.strip().lower()
    if t in ("", "none", "full"):
        return None
    h, _, w = t.partition("x")
    return int(h), int(w or h)


# key -> (parser, section, field name)
KEYS = {
    # scene generation
    "width": (int, "scene", "width"),
    "height": (int, "scene", "height"),
    "num_objects": (int, "scene", "num_objects"),
    "palette_shift": (float, "scene", "palette_shift"),
    "shading": (float, "scene", "shading"),
    "pixel_noise": (float, "scene", "pixel_noise"),
    "missing_frac": (float, "scene", "missing_frac"),
    "background_depth": (float, "scene", "background_depth"),
    "n_source": (int, "data", "n_source"),
    "n_target": (int, "data", "n_target"),
    "n_eval": (int, "data", "n_eval"),
    # segmentation
    "k_s": (int, "slic", "k_s"),
    "compactness": (float, "slic", "compactness"),
    "max_iters": (int, "slic", "max_iters"),
    "min_segment_frac": (float, "slic", "min_segment_frac"),
    "bins": (int, "depth", "bins"),
    "delta_peak": (float, "depth", "delta_peak"),
    # objectness loss
    "variant": (str, "obj", "variant"),
    "alpha_obj": (float, "obj", "alpha_obj"),
    "temperature": (float, "obj", "temperature"),
    "include_positive": (parse_bool, "obj", "include_positive"),
    "stop_grad_prototypes": (parse_bool, "obj", "stop_grad_prototypes"),
    # training
    "class_count": (int, "train", "class_count"),
    "alpha_st": (float, "train", "alpha_st"),
    "delta": (float, "train", "delta"),
    "tau_p": (float, "train", "tau_p"),
    "warmup_iters": (int, "train", "warmup_iters"),
    "warmup_source_only": (parse_bool, "train", "warmup_source_only"),
    "lr": (float, "train", "lr"),
    "t_train": (int, "train", "t_train"),
    "batch": (int, "train", "batch"),
    "embed_dim": (int, "train", "embed_dim"),
    "region_mode": (str, "train", "region_mode"),
    "missing_as_segment": (parse_bool, "train", "missing_as_segment"),
    "obj_size": (parse_size, "train", "obj_size"),
    "seed": (int, "global", "seed"),
    "depth_scale": (float, "global", "depth_scale"),
}


@dataclass
class DataSizes:
    n_source: int = 200
    n_target: int = 200
    n_eval: int = 50


@dataclass
class Settings:
    scene: SceneSpec = field(default_factory=SceneSpec)
    data: DataSizes = field(default_factory=DataSizes)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    depth_scale: float = 1.0 / 256.0

    def validate(self) -> None:
        self.scene.validate()
        self.train.validate()
        if min(self.data.n_source, self.data.n_target, self.data.n_eval) < 0:
            raise ValueError("scene counts must be non-negative")
        if not self.depth_scale > 0:
            raise ValueError("depth_scale must be positive")


def read_config_file(path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            if key not in KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value.strip()
    return values


def build_settings(values: dict[str, object]) -> Settings:
    """Settings from raw values (strings from a file or already-typed flag values)."""
    s = Settings()
    s.train.slic = SlicParams()
    s.train.depth = DepthSegParams()
    s.train.obj = ObjLossParams()
    sections = {"scene": s.scene, "data": s.data, "train": s.train, "slic": s.train.slic,
                "depth": s.train.depth, "obj": s.train.obj}
    for key, raw in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        parse, section, name = KEYS[key]
        try:
            value = parse(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        if section == "global":
            setattr(s, name, value)
        else:
            setattr(sections[section], name, value)
    s.scene.seed = s.seed
    s.train.seed = s.seed
    s.train.alpha_obj = s.train.obj.alpha_obj
    s.train.class_count = s.scene.class_count = s.train.class_count
    try:
        s.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return s
