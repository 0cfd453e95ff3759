"""Writers for the fusion engine's binary payload formats.

Deliberately standalone: the adapter talks to the engine through files
only, so these mirror the documented layouts rather than importing the
engine. All payloads are little-endian.
"""

from __future__ import annotations

import json
import struct

import numpy as np

BANK_MAGIC = b"EBK1"


def write_object_features(path: str, features: np.ndarray, valid: np.ndarray) -> None:
    """uint32 V, N, C; uint8 V*N validity; float32 V*N*C rows."""
    feats = np.asarray(features, dtype=np.float32)
    v, n, c = feats.shape
    ok = np.asarray(valid, dtype=np.uint8).reshape(v, n)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", v, n, c))
        fh.write(ok.astype("<u1").tobytes())
        fh.write(feats.astype("<f4").tobytes())


def write_dense_features(path: str, grid: np.ndarray) -> None:
    """uint32 H_f, W_f, C; float32 grid."""
    g = np.asarray(grid, dtype=np.float32)
    hf, wf, c = g.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", hf, wf, c))
        fh.write(g.astype("<f4").tobytes())


def write_bank(path: str, dim: int, instances: list[tuple[int, list[str], np.ndarray]],
               canonical: np.ndarray | None = None) -> None:
    """Prompt bank: magic, uint32 header length, JSON header, float32 vectors.

    instances: (catalog id, provenance texts, (N_k, C) vectors) per entry,
    written in ascending id order; canonical holds the four generic-phrase
    vectors when present.
    """
    instances = sorted(instances, key=lambda t: t[0])
    header = {
        "dim": dim,
        "instances": [
            {"id": int(k), "num_prompts": int(vecs.shape[0]), "texts": list(texts)}
            for k, texts, vecs in instances
        ],
        "canonical": canonical is not None,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, _, vecs in instances:
            fh.write(np.asarray(vecs, dtype=np.float32).astype("<f4").tobytes())
        if canonical is not None:
            fh.write(np.asarray(canonical, dtype=np.float32).astype("<f4").tobytes())


def read_scene_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
