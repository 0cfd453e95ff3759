"""Scene domain model: posed RGB-D views, point clouds, and 3D instance labels.

Conventions used throughout the package:
    depth map    H x W, z-coordinate in the camera frame (not ray length),
                 meters, value 0 = invalid pixel.
    mask map     H x W instance ids, 0 = background/table, 1..N = objects.
    pose         4 x 4 rigid transform, world -> camera, row-major.
    pixel (u, v) u = column index (x), v = row index (y); maps index [v, u].

Lifting a valid pixel (u, v) with depth z through intrinsics (fx, fy, cx, cy):

    p_cam   = ((u - cx) * z / fx, (v - cy) * z / fy, z)
    p_world = R^T (p_cam - t)        with pose = [[R, t], [0, 1]]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

POSE_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image dimensions must be >= 1")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class Pose:
    """Rigid world->camera transform with an orthonormality check."""

    matrix: np.ndarray  # (4, 4) float64

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValidationError(f"pose must be 4x4, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=POSE_ORTHO_TOL):
            raise ValidationError("pose last row must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=POSE_ORTHO_TOL):
            raise ValidationError("pose rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > POSE_ORTHO_TOL:
            raise ValidationError("pose rotation must be proper (det = +1)")
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(4))


@dataclass(frozen=True)
class View:
    id: int
    intrinsics: CameraIntrinsics
    pose: Pose
    depth: np.ndarray  # (H, W) float32, meters, 0 = invalid
    mask2d: np.ndarray  # (H, W) uint16 instance ids
    rgb: np.ndarray | None = None
    dense_features_path: str | None = None

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float32)
        mask = np.asarray(self.mask2d, dtype=np.uint16)
        shape = (self.intrinsics.height, self.intrinsics.width)
        if depth.shape != shape:
            raise ValidationError(f"depth shape {depth.shape} != intrinsics {shape}")
        if mask.shape != shape:
            raise ValidationError(f"mask shape {mask.shape} != intrinsics {shape}")
        if np.any(depth < 0):
            raise ValidationError("depth values must be >= 0")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "mask2d", mask)


@dataclass(frozen=True)
class Scene:
    views: tuple[View, ...]
    num_objects: int
    object_instance_ids: tuple[int, ...]  # local n in [1..N] -> global catalog id

    def __post_init__(self):
        views = tuple(self.views)
        if len({v.id for v in views}) != len(views):
            raise ValidationError("view ids must be unique")
        if [v.id for v in views] != list(range(len(views))):
            raise ValidationError("view ids must be contiguous from 0")
        if len(self.object_instance_ids) != self.num_objects:
            raise ValidationError("object_instance_ids length must equal num_objects")
        for v in views:
            if v.mask2d.max(initial=0) > self.num_objects:
                raise ValidationError(f"view {v.id} mask id exceeds num_objects")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "object_instance_ids", tuple(int(k) for k in self.object_instance_ids))

    @property
    def num_views(self) -> int:
        return len(self.views)

    def catalog_id(self, n: int) -> int:
        if not 1 <= n <= self.num_objects:
            raise ValidationError(f"object index {n} outside [1, {self.num_objects}]")
        return self.object_instance_ids[n - 1]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (M, 3) float64, world frame
    colors: np.ndarray | None = None  # (M, 3) uint8, pass-through only

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            cols = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if cols.shape[0] != pts.shape[0]:
                raise ValidationError("colors length must match points")
            object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Mask3D:
    labels: np.ndarray  # (M,) int32, 0 = table/background, 1..N = objects

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int32).reshape(-1)
        if lab.size and lab.min() < 0:
            raise ValidationError("labels must be >= 0")
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.labels.shape[0]


def depth_to_points(view: View) -> PointCloud:
    """Lift every valid (depth > 0) pixel of a view to a world-frame point.

    Output order is row-major over pixels, one point per valid pixel.
    """
    z = view.depth.astype(np.float64)
    valid = z > 0
    if not valid.any():
        return PointCloud(np.empty((0, 3)))
    vv, uu = np.nonzero(valid)
    zz = z[vv, uu]
    intr = view.intrinsics
    x = (uu - intr.cx) * zz / intr.fx
    y = (vv - intr.cy) * zz / intr.fy
    cam = np.stack([x, y, zz], axis=1)
    return PointCloud(view.pose.camera_to_world(cam))


def view_labels(view: View) -> np.ndarray:
    """Instance ids of the valid pixels of a view, in depth_to_points order."""
    valid = view.depth > 0
    return view.mask2d[valid].astype(np.int32)


def aggregate_cloud(scene: Scene, threads: int = 1) -> tuple[PointCloud, Mask3D]:
    """Concatenate per-view lifted clouds (ascending view id, row-major pixels).

    Each point carries the instance id of its source pixel.
    """
    from .util import parallel_map

    if scene.num_views < 1:
        raise ValidationError("scene must contain at least one view")
    clouds = parallel_map(depth_to_points, scene.views, threads)
    labels = [view_labels(v) for v in scene.views]
    points = np.concatenate([c.points for c in clouds], axis=0)
    return PointCloud(points), Mask3D(np.concatenate(labels))


def voxel_downsample(cloud: PointCloud, mask: Mask3D, d: float) -> tuple[PointCloud, Mask3D]:
    """Collapse points into a voxel grid of edge d: centroid + majority label.

    Label ties break to the lowest id so reruns are reproducible. Output is
    ordered by voxel key, which makes the operation idempotent.
    """
    if d <= 0:
        raise ValidationError("voxel size d must be > 0")
    if len(cloud) != len(mask):
        raise ValidationError("mask length must match cloud")
    if len(cloud) == 0:
        return cloud, mask
    keys = np.floor(cloud.points / d).astype(np.int64)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    n_vox = uniq.shape[0]

    sums = np.zeros((n_vox, 3))
    np.add.at(sums, inverse, cloud.points)
    centroids = sums / counts[:, None]

    n_lab = int(mask.labels.max(initial=0)) + 1
    votes = np.zeros((n_vox, n_lab), dtype=np.int64)
    np.add.at(votes, (inverse, mask.labels), 1)
    majority = votes.argmax(axis=1).astype(np.int32)  # argmax ties -> lowest id

    return PointCloud(centroids), Mask3D(majority)
