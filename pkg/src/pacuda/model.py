"""Per-pixel linear encoder + linear classifier, and its checkpoint format.

Checkpoint layout (little-endian): ``b"PACM"``, uint32 version, uint16 f,
uint16 d, uint16 C, uint16 reserved, then float64 phi (f x d, row-major),
b_phi (d), psi (d x C), b_psi (C).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .scene import pixel_features

FEATURE_DIM = 8
MAGIC = b"PACM"
VERSION = 1
_HEADER = struct.Struct("<4sIHHHH")


class CheckpointError(ValueError):
    pass


@dataclass
class ToyModel:
    phi: np.ndarray     # (f, d)
    b_phi: np.ndarray   # (d,)
    psi: np.ndarray     # (d, C)
    b_psi: np.ndarray   # (C,)

    @classmethod
    def init(cls, embed_dim: int, class_count: int, rng: np.random.Generator,
             feature_dim: int = FEATURE_DIM) -> "ToyModel":
        return cls(rng.normal(0.0, 1.0 / np.sqrt(feature_dim), (feature_dim, embed_dim)),
                   np.zeros(embed_dim),
                   rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, class_count)),
                   np.zeros(class_count))

    @classmethod
    def zeros(cls, embed_dim: int, class_count: int, feature_dim: int = FEATURE_DIM) -> "ToyModel":
        return cls(np.zeros((feature_dim, embed_dim)), np.zeros(embed_dim),
                   np.zeros((embed_dim, class_count)), np.zeros(class_count))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.phi.shape[0], self.phi.shape[1], self.psi.shape[1]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return self.phi, self.b_phi, self.psi, self.b_psi

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "ToyModel":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[i:i + a.size], dtype=np.float64).reshape(a.shape))
            i += a.size
        return ToyModel(*out)

    def copy(self) -> "ToyModel":
        return ToyModel(*(a.copy() for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def save(self, path) -> None:
        f, d, c = self.dims
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, f, d, c, 0))
            fh.write(self.flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ToyModel":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < _HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, version, f, d, c, _ = _HEADER.unpack_from(blob)
        if magic != MAGIC or version != VERSION:
            raise CheckpointError(f"{path}: not a version-{VERSION} PACM checkpoint")
        n = f * d + d + d * c + c
        body = blob[_HEADER.size:]
        if len(body) != 8 * n:
            raise CheckpointError(f"{path}: expected {n} parameters, found {len(body) / 8:g}")
        return cls.zeros(d, c, f).with_flat(np.frombuffer(body, dtype="<f8"))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward_features(model: ToyModel, feats: np.ndarray):
    """Embeddings, logits and probabilities for a ``(..., f)`` feature array."""
    emb = feats @ model.phi + model.b_phi
    logits = emb @ model.psi + model.b_psi
    return emb, logits, softmax(logits)


def forward(model: ToyModel, scene) -> tuple[np.ndarray, np.ndarray]:
    """``(embeddings (H, W, d), probabilities (H, W, C))`` for a scene or an RGB image."""
    image = getattr(scene, "image", scene)
    emb, _, probs = forward_features(model, pixel_features(image))
    return emb, probs
