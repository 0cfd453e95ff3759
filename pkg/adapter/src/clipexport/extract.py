"""The three export operations: object crops, dense patch grids, text banks.

All outputs are unit-normalized float32 in the engine's formats. Images are
preprocessed with an aspect-preserving resize to the model's native input
size, centered on a canvas filled with the dataset mean color (which maps
to zeros after normalization).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .formats import (read_scene_manifest, write_bank, write_dense_features,
                      write_object_features)
from .model import IMAGE_MEAN, IMAGE_STD, ModelBundle, encode_dense, encode_images, encode_texts

CANONICAL_PHRASES = ("object", "thing", "texture", "stuff")
CROP_MODES = ("crop", "crop-mask")
BACKGROUNDS = ("mean-color", "black")


@dataclass(frozen=True)
class AdapterConfig:
    model_id: str = "openai/clip-vit-large-patch14-336"
    device: str = "cpu"
    crop_mode: str = "crop-mask"
    background: str = "mean-color"
    batch_size: int = 16
    dense_divisor: int = 8  # dense output grid = (H/divisor, W/divisor)

    def __post_init__(self):
        if self.crop_mode not in CROP_MODES:
            raise ValueError(f"unknown crop mode {self.crop_mode!r}")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"unknown background {self.background!r}")
        if self.batch_size < 1 or self.dense_divisor < 1:
            raise ValueError("batch_size and dense_divisor must be >= 1")


def tight_box(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    """Tight (x0, y0, w, h) around nonzero mask pixels; None when empty."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)


def masked_crop(image: np.ndarray, mask: np.ndarray, mode: str, background: str) -> np.ndarray:
    """Crop the tight box; in crop-mask mode paint out-of-mask pixels."""
    box = tight_box(mask)
    if box is None:
        raise ValueError("object mask is empty")
    x0, y0, w, h = box
    crop = np.array(image[y0:y0 + h, x0:x0 + w], dtype=np.uint8, copy=True)
    if mode == "crop-mask":
        sub = mask[y0:y0 + h, x0:x0 + w]
        if background == "black":
            fill = np.zeros(3, dtype=np.uint8)
        else:
            fill = crop[sub].reshape(-1, 3).mean(axis=0).round().astype(np.uint8)
        crop[~sub] = fill
    return crop


def preprocess(image: np.ndarray, size: int) -> np.ndarray:
    """uint8 (H, W, 3) -> normalized float32 (size, size, 3), aspect kept."""
    h, w = image.shape[:2]
    scale = size / max(h, w)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    resized = np.asarray(Image.fromarray(image).resize((nw, nh), Image.BILINEAR))
    canvas = np.tile((IMAGE_MEAN * 255.0).round().astype(np.uint8), (size, size, 1))
    oy, ox = (size - nh) // 2, (size - nw) // 2
    canvas[oy:oy + nh, ox:ox + nw] = resized
    return ((canvas.astype(np.float32) / 255.0) - IMAGE_MEAN) / IMAGE_STD


def _load_rgb(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _load_mask(path: str, height: int, width: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<u2")
    if data.size != height * width:
        raise ValueError(f"{path}: mask size does not match intrinsics")
    return data.reshape(height, width)


def extract_object_features(scene_dir: str, bundle: ModelBundle, cfg: AdapterConfig,
                            out_path: str) -> tuple[np.ndarray, np.ndarray]:
    """One unit embedding per (view, visible object); writes the payload."""
    manifest = read_scene_manifest(os.path.join(scene_dir, "manifest.json"))
    n_obj = int(manifest["num_objects"])
    views = manifest["views"]
    feats = np.zeros((len(views), n_obj, bundle.dim), dtype=np.float32)
    valid = np.zeros((len(views), n_obj), dtype=bool)
    for meta in views:
        v = int(meta["id"])
        if "rgb" not in meta:
            raise ValueError(f"view {v} has no rgb reference; object crops need images")
        image = _load_rgb(os.path.join(scene_dir, meta["rgb"]))
        intr = meta["intrinsics"]
        mask = _load_mask(os.path.join(scene_dir, meta["mask"]),
                          int(intr["height"]), int(intr["width"]))
        if image.shape[:2] != mask.shape:
            raise ValueError(f"view {v}: rgb and mask dimensions differ")
        batch, slots = [], []
        for n in range(1, n_obj + 1):
            sel = mask == n
            if not sel.any():
                continue
            crop = masked_crop(image, sel, cfg.crop_mode, cfg.background)
            batch.append(preprocess(crop, bundle.image_size))
            slots.append(n - 1)
        for start in range(0, len(batch), cfg.batch_size):
            chunk = np.stack(batch[start:start + cfg.batch_size])
            emb = encode_images(bundle, chunk)
            for j, slot in enumerate(slots[start:start + cfg.batch_size]):
                feats[v, slot] = emb[j]
                valid[v, slot] = True
    write_object_features(out_path, feats, valid)
    return feats, valid


def extract_dense_features(image_path: str, bundle: ModelBundle, cfg: AdapterConfig,
                           out_path: str) -> np.ndarray:
    """Patch-level text-aligned grid, resampled to (H/divisor, W/divisor)."""
    image = _load_rgb(image_path)
    h, w = image.shape[:2]
    if h % cfg.dense_divisor or w % cfg.dense_divisor:
        raise ValueError(f"dense divisor {cfg.dense_divisor} must divide image dims {h}x{w}")
    square = np.asarray(Image.fromarray(image).resize(
        (bundle.image_size, bundle.image_size), Image.BILINEAR))
    pixels = ((square.astype(np.float32) / 255.0) - IMAGE_MEAN) / IMAGE_STD
    patch_grid = encode_dense(bundle, pixels)  # (P, P, C) unit rows
    hf, wf = h // cfg.dense_divisor, w // cfg.dense_divisor
    t = torch.from_numpy(np.transpose(patch_grid, (2, 0, 1)))[None]
    resized = torch.nn.functional.interpolate(t, size=(hf, wf), mode="bilinear",
                                              align_corners=False)[0]
    grid = np.transpose(resized.numpy(), (1, 2, 0)).astype(np.float64)
    norms = np.linalg.norm(grid, axis=2, keepdims=True)
    grid = grid / np.maximum(norms, 1e-12)
    write_dense_features(out_path, grid)
    return grid


def embed_texts(spec_path: str, bundle: ModelBundle, out_path: str,
                canonical: bool = False) -> None:
    """Prompt-bank export from a JSON spec: {"instances": [{"id", "texts"}]}."""
    with open(spec_path, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    instances = []
    for entry in spec["instances"]:
        texts = list(entry["texts"])
        if not texts:
            raise ValueError(f"instance {entry['id']} has no prompt texts")
        vectors = encode_texts(bundle, texts)
        instances.append((int(entry["id"]), texts, vectors))
    canonical_vectors = None
    if canonical or spec.get("canonical"):
        canonical_vectors = encode_texts(bundle, list(CANONICAL_PHRASES))
    write_bank(out_path, bundle.dim, instances, canonical_vectors)
