"""Region prototypes and the contrastive objectness loss, with exact gradients.

For a pixel ``p`` in valid region ``k`` the loss term is

    L(p) = -s(p, k) + log sum_{k' in Neg(k)} exp s(p, k')

where ``s(p, k) = <z_p/|z_p|, nu_k/|nu_k|> / temperature``, ``nu_k`` is the mean
embedding of region ``k`` and ``Neg(k)`` holds the valid regions whose label
differs from the label of ``k``.  Pixels whose region has no negatives are
skipped; the loss is the mean over the remaining ``S`` pixels (0 if ``S = 0``).

The ``plus`` variant replaces ``s(p, k)`` by a log-sum-exp over every valid
region sharing the label of ``k`` (``k`` included).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .regions import RegionLabeling
from .scene import DimensionMismatch

EPS = 1e-12


class MissingPrototypes(ValueError):
    pass


@dataclass
class ObjLossParams:
    variant: str = "standard"
    alpha_obj: float = 1.0
    temperature: float = 1.0
    include_positive: bool = False      # InfoNCE-style denominator
    stop_grad_prototypes: bool = False

    def validate(self) -> None:
        if self.variant not in ("standard", "plus"):
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if self.alpha_obj < 0:
            raise ValueError("alpha_obj must be non-negative")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass
class PrototypeSet:
    regions: np.ndarray      # 1-based region ids, ascending
    labels: np.ndarray
    raw: np.ndarray          # (n, d) mean embeddings
    normalized: np.ndarray   # (n, d) unit vectors
    region_map: np.ndarray   # (H', W') region ids the prototypes were computed on

    def __len__(self) -> int:
        return int(self.regions.size)


@dataclass
class ObjLossResult:
    loss: float
    contributing_pixels: int
    per_pixel_loss: np.ndarray | None = None
    gradient: np.ndarray | None = None


def _normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / np.maximum(norm, EPS), norm


def _normalize_backward(grad_u, u, norm):
    # u = x / max(|x|, eps)
    radial = (grad_u * u).sum(axis=-1, keepdims=True)
    return np.where(norm > EPS, (grad_u - radial * u) / np.maximum(norm, EPS), grad_u / EPS)


def _region_array(fused) -> np.ndarray:
    return np.asarray(getattr(fused, "data", fused), dtype=np.int64)


def _check_shapes(emb, region_map):
    if emb.ndim != 3:
        raise ValueError("embeddings must be (H, W, d)")
    if emb.shape[:2] != region_map.shape:
        raise DimensionMismatch(f"embeddings {emb.shape[:2]} vs regions {region_map.shape}")


def _members(region_map: np.ndarray, labeling: RegionLabeling):
    """Valid regions present in the map, and the prototype slot of each pixel (-1: none)."""
    r = region_map.ravel()
    if r.size and r.max() > labeling.region_count:
        raise ValueError("region map has ids beyond the labeling")
    counts = np.bincount(r, minlength=labeling.region_count + 1)
    valid = labeling.valid_regions
    present = valid[counts[valid] > 0]
    slot = np.full(labeling.region_count + 1, -1, dtype=np.int64)
    slot[present] = np.arange(present.size)
    return present, slot[r], counts[present]


def _segment_sums(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    return np.stack([np.bincount(idx, weights=values[:, j], minlength=n)
                     for j in range(values.shape[1])], axis=1) if n else np.zeros((0, values.shape[1]))


def compute_prototypes(emb: np.ndarray, fused_at_emb_res, labeling: RegionLabeling) -> PrototypeSet:
    emb = np.asarray(emb, dtype=np.float64)
    region_map = _region_array(fused_at_emb_res)
    _check_shapes(emb, region_map)
    present, pix_slot, counts = _members(region_map, labeling)
    Z = emb.reshape(-1, emb.shape[2])
    m = pix_slot >= 0
    raw = _segment_sums(Z[m], pix_slot[m], present.size) / np.maximum(counts, 1)[:, None]
    unit, _ = _normalize(raw)
    return PrototypeSet(present, labeling.label[present - 1], raw, unit, region_map)


def _loss_and_grad(emb, region_map, labeling, params, prototypes_raw, want_grad):
    params.validate()
    H, W, d = emb.shape
    present, pix_slot, counts = _members(region_map, labeling)
    n = present.size
    Z = emb.reshape(-1, d)
    members = np.nonzero(pix_slot >= 0)[0]
    per_pixel = np.zeros(H * W)
    grad = np.zeros_like(Z) if want_grad else None

    if n == 0:
        return ObjLossResult(0.0, 0, per_pixel.reshape(H, W),
                             grad.reshape(H, W, d) if want_grad else None)

    nu = prototypes_raw
    nu_t, nu_norm = _normalize(nu)
    lab = labeling.label[present - 1]
    same = lab[:, None] == lab[None, :]
    neg = ~same
    pos = same if params.variant == "plus" else np.eye(n, dtype=bool)
    den = (neg | pos) if params.include_positive else neg

    q = pix_slot[members]
    contributing = neg[q].any(axis=1)
    rows = members[contributing]
    q = q[contributing]
    S = int(rows.size)
    if S == 0:
        return ObjLossResult(0.0, 0, per_pixel.reshape(H, W),
                             grad.reshape(H, W, d) if want_grad else None)

    zt, z_norm = _normalize(Z[rows])
    sim = zt @ nu_t.T / params.temperature

    def masked_softmax(mask):
        x = np.where(mask, sim, -np.inf)
        top = x.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(x - top), 0.0)
        tot = e.sum(axis=1, keepdims=True)
        return top[:, 0] + np.log(tot[:, 0]), e / tot

    den_lse, den_w = masked_softmax(den[q])
    if params.variant == "plus":
        num, num_w = masked_softmax(pos[q])
    else:
        num = sim[np.arange(S), q]
        num_w = np.zeros_like(sim)
        num_w[np.arange(S), q] = 1.0
    terms = den_lse - num
    per_pixel[rows] = terms
    loss = float(terms.sum() / S)

    if want_grad:
        g_sim = (den_w - num_w) / (S * params.temperature)
        g_zt = g_sim @ nu_t
        grad[rows] += _normalize_backward(g_zt, zt, z_norm)
        if not params.stop_grad_prototypes:
            g_nu_t = g_sim.T @ zt
            g_nu = _normalize_backward(g_nu_t, nu_t, nu_norm)
            all_slots = pix_slot[members]
            grad[members] += g_nu[all_slots] / counts[all_slots, None]
    return ObjLossResult(loss, S, per_pixel.reshape(H, W),
                         grad.reshape(H, W, d) if want_grad else None)


def objectness_loss(emb: np.ndarray, protos: PrototypeSet, labeling: RegionLabeling,
                    params: ObjLossParams | None = None) -> ObjLossResult:
    """Loss value from precomputed prototypes (no gradient)."""
    params = params or ObjLossParams()
    emb = np.asarray(emb, dtype=np.float64)
    _check_shapes(emb, protos.region_map)
    present, _, _ = _members(protos.region_map, labeling)
    if not np.array_equal(present, protos.regions):
        raise MissingPrototypes("prototype set does not cover the valid regions of the map")
    return _loss_and_grad(emb, protos.region_map, labeling, params, protos.raw, want_grad=False)


def objectness_loss_grad(emb: np.ndarray, fused_at_emb_res, labeling: RegionLabeling,
                         params: ObjLossParams | None = None) -> ObjLossResult:
    """Loss and its gradient with respect to every raw embedding ``z_p``.

    The gradient includes the path through each pixel's own normalisation and,
    unless ``stop_grad_prototypes`` is set, the path through the region means.
    """
    params = params or ObjLossParams()
    emb = np.asarray(emb, dtype=np.float64)
    region_map = _region_array(fused_at_emb_res)
    _check_shapes(emb, region_map)
    protos = compute_prototypes(emb, region_map, labeling)
    return _loss_and_grad(emb, region_map, labeling, params, protos.raw, want_grad=True)
