"""Scene persistence: JSON manifest + raw little-endian binary maps + PLY.

Manifest schema (all paths relative to the manifest's directory):

    {
      "num_objects": N,
      "object_instance_ids": [k_1, ..., k_N],
      "upscale": 1.0,                      # optional, coordinate scale at load
      "bank": "bank.bin",                  # optional prompt-bank payload
      "object_features": "objfeat.bin",    # optional object-level payload
      "views": [
        {"id": 0,
         "intrinsics": {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..},
         "pose": [16 floats, row-major, world->camera],
         "depth": "depth_000.bin",         # float32 LE, row-major H*W, meters
         "mask": "mask_000.bin",           # uint16 LE, row-major H*W
         "rgb": "rgb_000.png",             # optional, pass-through
         "dense_features": "dense_000.bin" # optional per-view payload
        }, ...
      ]
    }
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ValidationError
from .scene import CameraIntrinsics, PointCloud, Pose, Scene, View

MANIFEST_NAME = "manifest.json"


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_scene(scene: Scene, out_dir: str, extra: dict | None = None) -> str:
    """Write manifest + per-view depth/mask binaries; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    views_meta = []
    for v in scene.views:
        depth_name = f"depth_{v.id:03d}.bin"
        mask_name = f"mask_{v.id:03d}.bin"
        v.depth.astype("<f4").tofile(os.path.join(out_dir, depth_name))
        v.mask2d.astype("<u2").tofile(os.path.join(out_dir, mask_name))
        meta = {
            "id": v.id,
            "intrinsics": {
                "fx": v.intrinsics.fx, "fy": v.intrinsics.fy,
                "cx": v.intrinsics.cx, "cy": v.intrinsics.cy,
                "width": v.intrinsics.width, "height": v.intrinsics.height,
            },
            "pose": [float(x) for x in v.pose.matrix.reshape(-1)],
            "depth": depth_name,
            "mask": mask_name,
        }
        if v.dense_features_path is not None:
            meta["dense_features"] = v.dense_features_path
        views_meta.append(meta)
    manifest = {
        "num_objects": scene.num_objects,
        "object_instance_ids": list(scene.object_instance_ids),
        "views": views_meta,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, MANIFEST_NAME)
    _write_json(path, manifest)
    return path


def load_scene(manifest_path: str) -> Scene:
    """Load a scene; applies the manifest's coordinate upscale at read time."""
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_NAME)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    scale = float(manifest.get("upscale", 1.0))
    if scale <= 0:
        raise ValidationError("upscale must be > 0")

    views = []
    for meta in manifest["views"]:
        ii = meta["intrinsics"]
        intr = CameraIntrinsics(
            fx=float(ii["fx"]), fy=float(ii["fy"]), cx=float(ii["cx"]), cy=float(ii["cy"]),
            width=int(ii["width"]), height=int(ii["height"]),
        )
        pose_mat = np.array(meta["pose"], dtype=np.float64).reshape(4, 4)
        if scale != 1.0:
            pose_mat = pose_mat.copy()
            pose_mat[:3, 3] *= scale
        depth = np.fromfile(os.path.join(base, meta["depth"]), dtype="<f4")
        mask = np.fromfile(os.path.join(base, meta["mask"]), dtype="<u2")
        n_px = intr.height * intr.width
        if depth.size != n_px or mask.size != n_px:
            raise ValidationError(f"view {meta['id']}: binary size does not match intrinsics")
        depth = depth.reshape(intr.height, intr.width)
        if scale != 1.0:
            depth = depth * np.float32(scale)
        views.append(View(
            id=int(meta["id"]), intrinsics=intr, pose=Pose(pose_mat),
            depth=depth, mask2d=mask.reshape(intr.height, intr.width),
            dense_features_path=meta.get("dense_features"),
        ))
    return Scene(
        views=tuple(views),
        num_objects=int(manifest["num_objects"]),
        object_instance_ids=tuple(int(k) for k in manifest["object_instance_ids"]),
    )


def read_manifest(scene_dir: str) -> dict:
    with open(os.path.join(scene_dir, MANIFEST_NAME), "r", encoding="utf-8") as fh:
        return json.load(fh)


def save_points_binary(path: str, cloud: PointCloud) -> None:
    """Raw M x 3 float32 little-endian."""
    cloud.points.astype("<f4").tofile(path)


def load_points_binary(path: str) -> PointCloud:
    data = np.fromfile(path, dtype="<f4")
    if data.size % 3 != 0:
        raise ValidationError(f"{path}: byte count is not a multiple of 3 floats")
    return PointCloud(data.reshape(-1, 3).astype(np.float64))


def save_ply(path: str, cloud: PointCloud, colors: np.ndarray | None = None) -> None:
    """ASCII PLY: x y z, plus r g b when colors are given."""
    pts = cloud.points
    cols = colors if colors is not None else cloud.colors
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        if cols is not None:
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        if cols is None:
            for p in pts:
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
        else:
            for p, c in zip(pts, cols):
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {int(c[0])} {int(c[1])} {int(c[2])}\n")


def save_labels(path: str, labels: np.ndarray) -> None:
    """Raw uint16 little-endian label vector."""
    lab = np.asarray(labels)
    if lab.size and (lab.min() < 0 or lab.max() > np.iinfo(np.uint16).max):
        raise ValidationError("labels outside uint16 range")
    lab.astype("<u2").tofile(path)


def load_labels(path: str) -> np.ndarray:
    return np.fromfile(path, dtype="<u2").astype(np.int32)
