"""Desk-scale self-training with the objectness regulariser.

The objective on one step is

    L_pac = L_cls(source) + alpha_st * L_st(target) + alpha_obj / B * sum_i L_obj(target_i)

with ``L_cls`` and ``L_st`` averaged per contributing pixel over the batch.
Pseudo-labels, region labels and region validity are recomputed from the
current model at every step and treated as constants when differentiating.
RGB/depth segmentations only depend on the input scene and are cached.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .depth import AllDepthMissing, DepthSegParams, depth_segment
from .model import ToyModel, forward_features
from .objectness import ObjLossParams, objectness_loss_grad
from .regions import (fuse_segments, label_regions, pseudo_label_regions,
                      unique_region_labeling)
from .scene import (IGNORE, NONE, DimensionMismatch, SceneSample, SegmentMap,
                    nearest_rows_cols, pixel_features)
from .slic import SlicParams, slic_segment

REGION_MODES = ("all", "rgb", "depth", "pl", "segments")


class NoLabeledPixels(ValueError):
    pass


# -- losses -------------------------------------------------------------------

def source_ce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean of ``-log p[true class]`` over non-IGNORE pixels."""
    labels = np.asarray(labels)
    if labels.shape != probs.shape[:-1]:
        raise DimensionMismatch(f"labels {labels.shape} vs probabilities {probs.shape[:-1]}")
    m = labels != IGNORE
    if not m.any():
        raise NoLabeledPixels("no labeled pixels")
    p = np.take_along_axis(probs[m], labels[m][:, None], axis=1)[:, 0]
    return float(-np.log(np.maximum(p, np.finfo(np.float64).tiny)).mean())


def pseudo_label(probs: np.ndarray, delta: float) -> np.ndarray:
    """Argmax class where the top probability reaches ``delta``, else NONE."""
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    top = probs.max(axis=-1)
    return np.where(top >= delta, np.argmax(probs, axis=-1), NONE).astype(np.int64)


def self_training_loss(probs: np.ndarray, pseudo: np.ndarray) -> float:
    m = np.asarray(pseudo) != NONE
    if not m.any():
        return 0.0
    p = np.take_along_axis(probs[m], pseudo[m][:, None], axis=1)[:, 0]
    return float(-np.log(np.maximum(p, np.finfo(np.float64).tiny)).mean())


# -- evaluation ---------------------------------------------------------------

def confusion_matrix(preds, gts, class_count: int) -> np.ndarray:
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    for pred, gt in zip(preds, gts):
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise DimensionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
        m = gt != IGNORE
        cm += np.bincount(gt[m] * class_count + pred[m],
                          minlength=class_count ** 2).reshape(class_count, class_count)
    return cm


def evaluate_iou(preds, gts, class_count: int) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN for classes absent from both) and their mean."""
    if len(preds) != len(gts):
        raise DimensionMismatch("prediction and ground-truth lists differ in length")
    cm = confusion_matrix(preds, gts, class_count)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(0) + cm.sum(1) - tp
    iou = np.divide(tp, union, out=np.full(class_count, np.nan), where=union > 0)
    present = ~np.isnan(iou)
    return iou, float(iou[present].mean()) if present.any() else float("nan")


# -- configuration and state ----------------------------------------------------

@dataclass
class TrainConfig:
    class_count: int = 4
    alpha_st: float = 1.0
    alpha_obj: float = 1.0
    delta: float = 0.9
    warmup_iters: int = 500
    lr: float = 0.5
    t_train: int = 3000
    batch: int = 2
    embed_dim: int = 8
    seed: int = 0
    tau_p: float = 0.9
    region_mode: str = "all"
    missing_as_segment: bool = False
    obj_size: tuple[int, int] | None = None   # embedding resolution for the loss
    warmup_source_only: bool = True
    slic: SlicParams = field(default_factory=SlicParams)
    depth: DepthSegParams = field(default_factory=DepthSegParams)
    obj: ObjLossParams = field(default_factory=ObjLossParams)

    def validate(self) -> None:
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        if not 0.0 < self.tau_p <= 1.0:
            raise ValueError("tau_p must lie in (0, 1]")
        if self.t_train < 0 or self.warmup_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.warmup_iters > self.t_train:
            raise ValueError("warmup_iters cannot exceed t_train")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be at least 2")
        if self.alpha_st < 0 or self.alpha_obj < 0:
            raise ValueError("loss weights must be non-negative")
        if self.region_mode not in REGION_MODES:
            raise ValueError(f"region_mode must be one of {REGION_MODES}")
        self.slic.validate()
        self.depth.validate()
        self.obj.validate()


@dataclass
class Prepared:
    """Per-scene data that never depends on the model."""

    features: np.ndarray
    labels: np.ndarray | None
    regions: SegmentMap | None = None


def segment_scene(scene: SceneSample, config: TrainConfig) -> SegmentMap | None:
    """Fixed object regions for a target scene (None for modes that need pseudo-labels)."""
    mode = config.region_mode
    if mode == "pl":
        return None
    h, w = scene.shape
    rgb = slic_segment(scene.image, config.slic) if mode in ("all", "rgb", "segments") else None
    if mode == "rgb":
        return rgb
    try:
        dep = depth_segment(scene.depth, config.depth)
    except AllDepthMissing:
        dep = SegmentMap(np.zeros((h, w), dtype=np.int64), 0)
    if mode == "depth":
        return dep
    return fuse_segments(rgb, dep, config.missing_as_segment)


@dataclass
class TrainState:
    model: ToyModel
    config: TrainConfig
    iteration: int = 0
    cache: dict = field(default_factory=dict)

    def prepare(self, scene: SceneSample, target: bool) -> Prepared:
        key = (id(scene), target)
        hit = self.cache.get(key)
        if hit is not None and hit[0] is scene:
            return hit[1]
        prep = Prepared(pixel_features(scene.image), scene.labels,
                        segment_scene(scene, self.config) if target else None)
        self.cache[key] = (scene, prep)
        return prep


def init_state(config: TrainConfig, rng: np.random.Generator | None = None) -> TrainState:
    config.validate()
    rng = rng or np.random.default_rng(config.seed)
    return TrainState(ToyModel.init(config.embed_dim, config.class_count, rng), config)


# -- objective ------------------------------------------------------------------

@dataclass
class StepLosses:
    total: float = 0.0
    cls: float = 0.0
    st: float = 0.0
    obj: float = 0.0
    contributing: int = 0
    coverage: float = 0.0


def _ce_grad(probs: np.ndarray, targets: np.ndarray, n: int) -> np.ndarray:
    g = probs.copy()
    g[np.arange(len(targets)), targets] -= 1.0
    return g / n


def _obj_for_scene(emb, probs, pseudo, prep: Prepared, config: TrainConfig):
    """Objectness loss and gradient on one target scene's embeddings (H, W, d)."""
    h, w, _ = emb.shape
    if config.region_mode == "pl":
        regions = pseudo_label_regions(pseudo)
    else:
        regions = prep.regions
    if config.region_mode == "segments":
        labeling = unique_region_labeling(regions)
    else:
        labeling = label_regions(regions, pseudo, config.class_count, config.tau_p)
    if config.obj_size is None:
        return objectness_loss_grad(emb, regions, labeling, config.obj)
    rows, cols = nearest_rows_cols(h, w, *config.obj_size)
    sub = emb[rows[:, None], cols[None, :]]
    res = objectness_loss_grad(sub, regions.data[rows[:, None], cols[None, :]], labeling, config.obj)
    full = np.zeros_like(emb)
    full[rows[:, None], cols[None, :]] = res.gradient
    res.gradient = full
    return res


def pac_objective(model: ToyModel, source: list[Prepared], target: list[Prepared],
                  config: TrainConfig, alpha_st: float, alpha_obj: float,
                  want_grad: bool = True):
    """Value of the full objective and its gradient with respect to every parameter."""
    phi, b_phi, psi, b_psi = model.arrays()
    grads = ToyModel.zeros(*model.dims[1:], feature_dim=model.dims[0]) if want_grad else None
    losses = StepLosses()

    def backprop(feats, d_logits, d_emb_extra=None, emb=None):
        grads.psi += emb.T @ d_logits
        grads.b_psi += d_logits.sum(0)
        d_emb = d_logits @ psi.T
        if d_emb_extra is not None:
            d_emb = d_emb + d_emb_extra
        grads.phi += feats.T @ d_emb
        grads.b_phi += d_emb.sum(0)

    # source cross-entropy, pooled over the batch
    fs = [p.features.reshape(-1, phi.shape[0]) for p in source]
    ys = [p.labels.ravel() for p in source]
    n_lab = sum(int((y != IGNORE).sum()) for y in ys)
    if n_lab == 0:
        raise NoLabeledPixels("source batch has no labeled pixels")
    nll = 0.0
    for f, y in zip(fs, ys):
        emb, _, probs = forward_features(model, f)
        m = y != IGNORE
        nll -= np.log(np.maximum(probs[m, y[m]], np.finfo(np.float64).tiny)).sum()
        if want_grad:
            d_logits = np.zeros_like(probs)
            d_logits[m] = _ce_grad(probs[m], y[m], n_lab)
            backprop(f, d_logits, emb=emb)
    losses.cls = nll / n_lab

    if alpha_st > 0 or alpha_obj > 0:
        outs = []
        n_pl = 0
        n_px = 0
        for prep in target:
            h, w, f_dim = prep.features.shape
            f = prep.features.reshape(-1, f_dim)
            emb, _, probs = forward_features(model, f)
            pseudo = pseudo_label(probs, config.delta)
            outs.append((f, emb, probs, pseudo, h, w))
            n_pl += int((pseudo != NONE).sum())
            n_px += pseudo.size
        losses.coverage = n_pl / max(n_px, 1)
        st_sum = 0.0
        obj_sum = 0.0
        for prep, (f, emb, probs, pseudo, h, w) in zip(target, outs):
            m = pseudo != NONE
            d_logits = np.zeros_like(probs)
            if alpha_st > 0 and n_pl:
                st_sum -= np.log(np.maximum(probs[m, pseudo[m]], np.finfo(np.float64).tiny)).sum()
                d_logits[m] = alpha_st * _ce_grad(probs[m], pseudo[m], n_pl)
            d_emb_obj = None
            if alpha_obj > 0:
                res = _obj_for_scene(emb.reshape(h, w, -1), probs.reshape(h, w, -1),
                                     pseudo.reshape(h, w), prep, config)
                obj_sum += res.loss
                losses.contributing += res.contributing_pixels
                d_emb_obj = (alpha_obj / len(target)) * res.gradient.reshape(h * w, -1)
            if want_grad:
                backprop(f, d_logits, d_emb_obj, emb=emb)
        losses.st = st_sum / n_pl if n_pl else 0.0
        losses.obj = obj_sum / len(target) if alpha_obj > 0 else 0.0

    losses.total = losses.cls + alpha_st * losses.st + alpha_obj * losses.obj
    return losses, grads


def effective_weights(config: TrainConfig, iteration: int) -> tuple[float, float]:
    if iteration < config.warmup_iters:
        return (0.0 if config.warmup_source_only else config.alpha_st), 0.0
    return config.alpha_st, config.alpha_obj


def pac_step(state: TrainState, source_batch: list[SceneSample],
             target_batch: list[SceneSample]) -> tuple[TrainState, StepLosses]:
    """One SGD update on the full objective; returns the new state and the step's losses."""
    cfg = state.config
    alpha_st, alpha_obj = effective_weights(cfg, state.iteration)
    source = [state.prepare(s, target=False) for s in source_batch]
    target = [state.prepare(t, target=True) for t in target_batch] if (alpha_st or alpha_obj) else []
    losses, grads = pac_objective(state.model, source, target, cfg, alpha_st, alpha_obj)
    model = ToyModel(*(p - cfg.lr * g for p, g in zip(state.model.arrays(), grads.arrays())))
    return replace(state, model=model, iteration=state.iteration + 1), losses


# -- outer loop -------------------------------------------------------------------

def predict(model: ToyModel, scene: SceneSample) -> np.ndarray:
    _, _, probs = forward_features(model, pixel_features(scene.image))
    return np.argmax(probs, axis=-1)


def evaluate_model(model: ToyModel, scenes: list[SceneSample], class_count: int):
    preds = [predict(model, s) for s in scenes]
    return evaluate_iou(preds, [s.labels for s in scenes], class_count)


@dataclass
class TrainReport:
    records: list[StepLosses]
    metrics: dict[str, tuple[np.ndarray, float]]
    wall_time: float = 0.0
    model: ToyModel | None = None

    def mIoU(self, split: str) -> float:
        return self.metrics[split][1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "l_cls", "l_st", "l_obj", "S", "coverage"])
        for i, r in enumerate(self.records):
            writer.writerow([i, repr(r.cls), repr(r.st), repr(r.obj), r.contributing, repr(r.coverage)])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for split, (iou, miou) in self.metrics.items():
            per_class = " ".join("nan" if np.isnan(v) else f"{v:.4f}" for v in iou)
            lines.append(f"{split}: mIoU={miou:.4f} IoU=[{per_class}]")
        return "\n".join(lines) + "\n"


def run_pac_uda(config: TrainConfig, source_set: list[SceneSample], target_set: list[SceneSample],
                eval_sets: dict[str, list[SceneSample]] | None = None,
                progress=None) -> TrainReport:
    """Source-only warm-up for ``warmup_iters`` steps, then full steps, then evaluation."""
    if not source_set or not target_set:
        raise ValueError("source and target sets must be non-empty")
    config.validate()
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    state = init_state(config, rng)
    records = []
    for it in range(config.t_train):
        src = rng.choice(len(source_set), size=config.batch, replace=len(source_set) < config.batch)
        tgt = rng.choice(len(target_set), size=config.batch, replace=len(target_set) < config.batch)
        state, losses = pac_step(state, [source_set[i] for i in src], [target_set[i] for i in tgt])
        records.append(losses)
        if progress is not None:
            progress(it, losses)
    metrics = {name: evaluate_model(state.model, scenes, config.class_count)
               for name, scenes in (eval_sets or {}).items()}
    return TrainReport(records, metrics, time.perf_counter() - start, state.model)
