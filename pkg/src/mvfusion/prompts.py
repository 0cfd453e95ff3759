"""Text-embedding bank: per-instance prompt sets, mean prompts, query contexts.

The bank stores, per catalog instance k, the raw prompt embeddings Q_k and
their renormalized mean q_k. Query contexts pair one positive mean prompt
with a negative set drawn by one of four strategies:

    scene      mean prompts of the other instances present in the scene
    all        mean prompts of every other catalog instance
    canonical  the four fixed generic phrases (object/thing/texture/stuff)
    none       no negatives

Bank file format: 4-byte magic "EBK1", uint32 LE header length, UTF-8 JSON
header, then float32 LE vectors concatenated in header order (per-instance
prompts first, then the 4 canonical vectors when present).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .scene import Scene

BANK_MAGIC = b"EBK1"
CANONICAL_PHRASES = ("object", "thing", "texture", "stuff")
NEGATIVE_STRATEGIES = ("scene", "all", "canonical", "none")
REDUCTIONS = ("max", "mean")
UNIT_NORM_TOL = 1e-5


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; rejects zero vectors."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericalError("cosine of a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def object_prompt(prompt_set: np.ndarray) -> np.ndarray:
    """Renormalized arithmetic mean of a non-empty prompt set (rows)."""
    q = np.asarray(prompt_set, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.shape[0] < 1:
        raise ValidationError("prompt set must contain at least one embedding")
    mean = q.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise NumericalError("degenerate prompt set: mean embedding has zero norm")
    return mean / norm


@dataclass(frozen=True)
class PromptBank:
    """Immutable map from catalog instance id to prompts and mean prompt."""

    dim: int
    prompt_sets: dict[int, np.ndarray]  # k -> (N_k, C) unit rows
    texts: dict[int, tuple[str, ...]] = field(default_factory=dict)
    canonical: np.ndarray | None = None  # (4, C) or None
    means: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        means = {}
        for k, q in sorted(self.prompt_sets.items()):
            q = np.asarray(q, dtype=np.float64)
            if q.ndim != 2 or q.shape[1] != self.dim:
                raise ValidationError(f"instance {k}: prompts must be (N_k, {self.dim})")
            if q.shape[0] < 1:
                raise ValidationError(f"instance {k}: needs at least one prompt")
            norms = np.linalg.norm(q, axis=1)
            if not np.all(np.isfinite(q)) or np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise ValidationError(f"instance {k}: prompt embeddings must be unit-norm")
            self.prompt_sets[k] = q
            means[k] = object_prompt(q)
        if self.canonical is not None:
            can = np.asarray(self.canonical, dtype=np.float64)
            if can.shape != (len(CANONICAL_PHRASES), self.dim):
                raise ValidationError("canonical set must be 4 x C")
            object.__setattr__(self, "canonical", can)
        object.__setattr__(self, "means", means)

    @property
    def instance_ids(self) -> list[int]:
        return sorted(self.prompt_sets.keys())

    def mean_prompt(self, k: int) -> np.ndarray:
        if k not in self.means:
            raise ValidationError(f"unknown catalog instance {k}")
        return self.means[k]

    def save(self, path: str) -> None:
        ids = self.instance_ids
        header = {
            "dim": self.dim,
            "instances": [
                {
                    "id": k,
                    "num_prompts": int(self.prompt_sets[k].shape[0]),
                    "texts": list(self.texts.get(k, ())),
                }
                for k in ids
            ],
            "canonical": self.canonical is not None,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        chunks = [self.prompt_sets[k].astype("<f4").tobytes() for k in ids]
        if self.canonical is not None:
            chunks.append(self.canonical.astype("<f4").tobytes())
        with open(path, "wb") as fh:
            fh.write(BANK_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for c in chunks:
                fh.write(c)

    @staticmethod
    def load(path: str) -> "PromptBank":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != BANK_MAGIC:
                raise ValidationError(f"{path}: not an embedding bank file")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            data = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
        dim = int(header["dim"])
        sets: dict[int, np.ndarray] = {}
        texts: dict[int, tuple[str, ...]] = {}
        offset = 0
        for meta in header["instances"]:
            k, nk = int(meta["id"]), int(meta["num_prompts"])
            end = offset + nk * dim
            if end > data.size:
                raise ValidationError(f"{path}: truncated payload")
            sets[k] = data[offset:end].reshape(nk, dim)
            texts[k] = tuple(meta.get("texts", ()))
            offset = end
        canonical = None
        if header.get("canonical"):
            end = offset + len(CANONICAL_PHRASES) * dim
            if end > data.size:
                raise ValidationError(f"{path}: truncated canonical block")
            canonical = data[offset:end].reshape(len(CANONICAL_PHRASES), dim)
            offset = end
        if offset != data.size:
            raise ValidationError(f"{path}: trailing bytes after payload")
        return PromptBank(dim=dim, prompt_sets=sets, texts=texts, canonical=canonical)


@dataclass(frozen=True)
class QueryContext:
    """One positive mean prompt plus its negative set and reduction rule."""

    positive: np.ndarray  # (C,)
    negatives: np.ndarray  # (n_neg, C); may be empty
    strategy: str = "scene"
    reduction: str = "max"

    def __post_init__(self):
        pos = np.asarray(self.positive, dtype=np.float64).reshape(-1)
        neg = np.asarray(self.negatives, dtype=np.float64)
        if neg.size == 0:
            neg = np.empty((0, pos.size))
        if neg.ndim != 2 or neg.shape[1] != pos.size:
            raise ValidationError("negatives must be (n, C) matching the positive")
        if self.strategy not in NEGATIVE_STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.reduction not in REDUCTIONS:
            raise ValidationError(f"unknown reduction {self.reduction!r}")
        if self.strategy == "none" and neg.shape[0] != 0:
            raise ValidationError("strategy 'none' must carry no negatives")
        if neg.shape[0] and np.any(np.all(np.isclose(neg, pos, atol=1e-12), axis=1)):
            raise ValidationError("positive prompt found among negatives")
        object.__setattr__(self, "positive", pos)
        object.__setattr__(self, "negatives", neg)

    @property
    def num_negatives(self) -> int:
        return self.negatives.shape[0]


def build_context(bank: PromptBank, scene: Scene, target: int,
                  strategy: str = "scene", reduction: str = "max") -> QueryContext:
    """Context for in-scene object n (local id): positive q_k(n) + negatives."""
    k_pos = scene.catalog_id(target)
    positive = bank.mean_prompt(k_pos)
    if strategy == "scene":
        ks = sorted({scene.catalog_id(n) for n in range(1, scene.num_objects + 1)} - {k_pos})
        negatives = np.stack([bank.mean_prompt(k) for k in ks]) if ks else np.empty((0, bank.dim))
    elif strategy == "all":
        ks = [k for k in bank.instance_ids if k != k_pos]
        negatives = np.stack([bank.mean_prompt(k) for k in ks]) if ks else np.empty((0, bank.dim))
    elif strategy == "canonical":
        if bank.canonical is None:
            raise ValidationError("bank has no canonical phrase embeddings")
        negatives = bank.canonical
    elif strategy == "none":
        negatives = np.empty((0, bank.dim))
    else:
        raise ValidationError(f"unknown strategy {strategy!r}")
    return QueryContext(positive=positive, negatives=negatives,
                        strategy=strategy, reduction=reduction)


def scene_contexts(bank: PromptBank, scene: Scene, strategy: str = "scene",
                   reduction: str = "max") -> dict[int, QueryContext]:
    """Contexts for every in-scene object, keyed by local instance id."""
    return {
        n: build_context(bank, scene, n, strategy=strategy, reduction=reduction)
        for n in range(1, scene.num_objects + 1)
    }
