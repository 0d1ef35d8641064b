"""``pac`` command line: scene generation, per-stage segmentation, loss, training, evaluation.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or decode error.
Machine-readable results go to standard output as CSV; progress and human
summaries go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import KEYS, ConfigError, Settings, build_settings, read_config_file
from .depth import AllDepthMissing, depth_segment
from .model import CheckpointError, ToyModel, forward
from .objectness import objectness_loss_grad
from .raster import (DecodeError, IoError, MissingFile, load_scene, load_segment_map,
                     read_depth, read_labels, read_rgb, save_scene, save_segment_map)
from .regions import fuse_segments, label_regions, pseudo_label_regions, unique_region_labeling
from .scene import DimensionMismatch, SceneSample, SegmentMap, generate_scenes, pixel_features
from .slic import EmptyImage, slic_segment
from .trainer import evaluate_model, run_pac_uda, segment_scene

SPLITS = ("source", "target", "eval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- argument parsing --------------------------------------------------------------

def _flag_type(parse):
    def convert(text):
        try:
            return parse(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    convert.__name__ = getattr(parse, "__name__", "value")
    return convert


def _common(globals_only: bool = False) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    # SUPPRESS lets the flags appear before or after the subcommand
    g.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS)
    g.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS)
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--depth-scale", type=float, default=argparse.SUPPRESS)
    if not globals_only:
        k = p.add_argument_group("parameters (override the config file)")
        for key, (parse, _, _) in KEYS.items():
            if key in ("seed", "depth_scale"):
                continue
            k.add_argument("--" + key.replace("_", "-"), dest="param_" + key,
                           type=_flag_type(parse), default=argparse.SUPPRESS, metavar="V")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="pac", description="Objectness-regularised self-training on RGB-D scenes.",
                     parents=[_common(globals_only=True)])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", parents=[common], help="write synthetic source/target/eval scenes")

    p = sub.add_parser("segment", parents=[common], help="RGB, depth or fused segment maps")
    p.add_argument("stage", choices=("rgb", "depth", "fuse"))
    p.add_argument("inputs", nargs="+", metavar="PATH",
                   help="rgb: image PNG; depth: depth PNG; fuse: RGB and depth raw16 maps")
    p.add_argument("--name", help="output file stem")

    p = sub.add_parser("fuse", parents=[common], help="fuse an RGB and a depth raw16 map")
    p.add_argument("inputs", nargs=2, metavar="PATH")
    p.add_argument("--name", help="output file stem")

    p = sub.add_parser("label", parents=[common], help="region labels from a fused map and pseudo-labels")
    p.add_argument("fused", metavar="FUSED")
    p.add_argument("pseudo", metavar="PSEUDO")

    p = sub.add_parser("loss", parents=[common], help="objectness loss on one scene")
    p.add_argument("image")
    p.add_argument("depth")
    p.add_argument("pseudo")
    p.add_argument("--checkpoint", help="model whose embeddings are used (default: raw features)")
    p.add_argument("--regions-csv", metavar="PATH", help="also write per-region statistics")

    p = sub.add_parser("train", parents=[common], help="train and write report.csv + model.pacm")
    p.add_argument("data", nargs="?", help="directory written by 'gen' (default: generate in memory)")

    p = sub.add_parser("eval", parents=[common], help="per-class IoU of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("data", nargs="?", help="directory written by 'gen' (default: generate in memory)")
    p.add_argument("--split", default="eval", choices=SPLITS)
    return parser


def settings_from_args(args) -> Settings:
    values: dict[str, object] = {}
    if getattr(args, "config", None):
        try:
            values.update(read_config_file(args.config))
        except OSError as exc:
            raise IoError(f"cannot read config: {exc}") from None
    for name, value in vars(args).items():
        if name.startswith("param_"):
            values[name[len("param_"):]] = value
    if hasattr(args, "seed"):
        values["seed"] = args.seed
    if hasattr(args, "depth_scale"):
        values["depth_scale"] = args.depth_scale
    return build_settings(values)


# -- helpers ---------------------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from None
    return out


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_segments(seg: SegmentMap, out: Path, stem: str) -> Path:
    path = out / f"{stem}.png"
    save_segment_map(seg, path, "raw16")
    save_segment_map(seg, out / f"{stem}_color.png", "colorized")
    return path


def _csv_out():
    return csv.writer(sys.stdout, lineterminator="\n")


def _scene_sets(settings: Settings) -> dict[str, list[SceneSample]]:
    d = settings.data
    spec = settings.scene
    targets = generate_scenes(spec, d.n_target + d.n_eval, "target")
    return {"source": generate_scenes(spec, d.n_source, "source"),
            "target": targets[:d.n_target], "eval": targets[d.n_target:]}


def _load_split(root: Path, split: str, depth_scale: float) -> list[SceneSample]:
    folder = root / split
    if not folder.is_dir():
        raise MissingFile(f"{folder}: no such directory")
    scenes = []
    for rgb in sorted(folder.glob("*_rgb.png")):
        stem = str(rgb)[:-len("_rgb.png")]
        label = Path(stem + "_label.png")
        scenes.append(load_scene(rgb, stem + "_depth.png", label if label.exists() else None,
                                 depth_scale))
    return scenes


def _datasets(args, settings: Settings) -> dict[str, list[SceneSample]]:
    if getattr(args, "data", None):
        root = Path(args.data)
        return {s: _load_split(root, s, settings.depth_scale) for s in SPLITS}
    return _scene_sets(settings)


# -- commands ------------------------------------------------------------------------

def cmd_gen(args, settings: Settings) -> int:
    out = _out_dir(args)
    sets = _scene_sets(settings)
    for split in SPLITS:
        folder = out / split
        folder.mkdir(parents=True, exist_ok=True)
        for i, scene in enumerate(sets[split]):
            save_scene(scene, folder / f"{i:04d}", settings.depth_scale)
    w = _csv_out()
    w.writerow(["split", "scenes"])
    for split in SPLITS:
        w.writerow([split, len(sets[split])])
    return 0


def cmd_segment(args, settings: Settings) -> int:
    out = _out_dir(args)
    cfg = settings.train
    stage = args.stage
    need = 2 if stage == "fuse" else 1
    if len(args.inputs) != need:
        raise UsageError(f"segment {stage} takes {need} input path(s)")
    first = Path(args.inputs[0])
    if stage == "rgb":
        seg = slic_segment(read_rgb(first), cfg.slic)
    elif stage == "depth":
        seg = depth_segment(read_depth(first, settings.depth_scale), cfg.depth)
    else:
        seg = fuse_segments(load_segment_map(first), load_segment_map(args.inputs[1]),
                            cfg.missing_as_segment)
    stem = args.name or f"{first.stem}_{stage}seg"
    path = _write_segments(seg, out, stem)
    w = _csv_out()
    w.writerow(["path", "segments"])
    w.writerow([path.as_posix(), seg.count])
    _info(f"{stage}: {seg.count} segments -> {path}")
    return 0


def cmd_fuse(args, settings: Settings) -> int:
    args.stage = "fuse"
    return cmd_segment(args, settings)


def cmd_label(args, settings: Settings) -> int:
    fused = load_segment_map(args.fused)
    pseudo = read_labels(args.pseudo)
    labeling = label_regions(fused, pseudo, settings.train.class_count, settings.train.tau_p)
    labeling.write_csv(sys.stdout)
    _info(f"{labeling.valid.sum()} of {labeling.region_count} regions valid")
    return 0


def cmd_loss(args, settings: Settings) -> int:
    cfg = settings.train
    scene = load_scene(args.image, args.depth, None, settings.depth_scale)
    pseudo = read_labels(args.pseudo)
    if pseudo.shape != scene.shape:
        raise DimensionMismatch(f"pseudo-labels {pseudo.shape} vs scene {scene.shape}")
    if args.checkpoint:
        try:
            model = ToyModel.load(args.checkpoint)
        except FileNotFoundError:
            raise MissingFile(f"{args.checkpoint}: no such file") from None
        emb = forward(model, scene)[0]
    else:
        emb = pixel_features(scene.image)
    if cfg.region_mode == "pl":
        regions = pseudo_label_regions(pseudo)
    else:
        regions = segment_scene(scene, cfg)
    if cfg.region_mode == "segments":
        labeling = unique_region_labeling(regions)
    else:
        labeling = label_regions(regions, pseudo, cfg.class_count, cfg.tau_p)
    res = objectness_loss_grad(emb, regions, labeling, cfg.obj)
    w = _csv_out()
    w.writerow(["loss", "S", "regions", "valid_regions"])
    w.writerow([repr(float(res.loss)), res.contributing_pixels, labeling.region_count,
                int(labeling.valid.sum())])
    if args.regions_csv:
        with open(args.regions_csv, "w", newline="") as fh:
            labeling.write_csv(fh)
    return 0


def _metrics_rows(w, split, iou, miou):
    for c, v in enumerate(iou):
        w.writerow([split, c, "nan" if np.isnan(v) else f"{v:.6f}"])
    w.writerow([split, "mIoU", f"{miou:.6f}"])


def cmd_train(args, settings: Settings) -> int:
    out = _out_dir(args)
    data = _datasets(args, settings)
    evals = {name: data[name] for name in ("target", "eval") if data[name]}

    def progress(it, losses):
        if (it + 1) % 500 == 0:
            _info(f"iter {it + 1}: cls={losses.cls:.4f} st={losses.st:.4f} "
                  f"obj={losses.obj:.4f} S={losses.contributing}")

    report = run_pac_uda(settings.train, data["source"], data["target"], evals, progress)
    (out / "report.csv").write_text(report.to_csv())
    (out / "summary.txt").write_text(report.summary())
    report.model.save(out / "model.pacm")
    w = _csv_out()
    w.writerow(["split", "class", "iou"])
    for split, (iou, miou) in report.metrics.items():
        _metrics_rows(w, split, iou, miou)
    _info(report.summary().rstrip() + f"\nwall time {report.wall_time:.1f}s")
    return 0


def cmd_eval(args, settings: Settings) -> int:
    try:
        model = ToyModel.load(args.checkpoint)
    except FileNotFoundError:
        raise MissingFile(f"{args.checkpoint}: no such file") from None
    scenes = _datasets(args, settings)[args.split]
    if not scenes:
        raise UsageError(f"split {args.split!r} has no scenes")
    iou, miou = evaluate_model(model, scenes, settings.train.class_count)
    w = _csv_out()
    w.writerow(["split", "class", "iou"])
    _metrics_rows(w, args.split, iou, miou)
    return 0


COMMANDS = {"gen": cmd_gen, "segment": cmd_segment, "fuse": cmd_fuse, "label": cmd_label,
            "loss": cmd_loss, "train": cmd_train, "eval": cmd_eval}

IO_ERRORS = (MissingFile, DecodeError, IoError, CheckpointError, DimensionMismatch, OSError)
CONFIG_ERRORS = (UsageError, ConfigError, EmptyImage, AllDepthMissing, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = settings_from_args(args)
        return COMMANDS[args.command](args, settings)
    except SystemExit as exc:     # --help
        return int(exc.code or 0)
    except IO_ERRORS as exc:
        print(f"pac: error: {exc}", file=sys.stderr)
        return 2
    except CONFIG_ERRORS as exc:
        print(f"pac: error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
