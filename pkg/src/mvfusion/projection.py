"""Back-projection of world points into camera views and visibility reasoning.

A world point x is mapped to a homogeneous pixel u = (u_x, u_y, u_z) via
K . (R x + t); u_z equals the camera-frame depth. A point is inside the
field of view iff u_z > 0 and (u_x/u_z, u_y/u_z) lands in [0, W) x [0, H),
and visible iff additionally the view's depth buffer agrees with u_z within
an occlusion tolerance at the nearest pixel:

    |u_z - D(round(u_x/u_z), round(u_y/u_z))| <= c_thr,   D > 0

Pixel lookup is nearest-neighbor by design: depth and mask maps are not
interpolable across object boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scene import CameraIntrinsics, PointCloud, Scene, View
from .util import parallel_map

DEFAULT_C_THR = 0.02  # meters; one voxel


@dataclass(frozen=True)
class ProjectionConfig:
    c_thr: float = DEFAULT_C_THR

    def __post_init__(self):
        if self.c_thr <= 0:
            raise ValidationError("occlusion tolerance c_thr must be > 0")


@dataclass(frozen=True)
class VisibilityMap:
    """Per-(view, point) visibility and the pixel each visible point maps to."""

    point_vis: np.ndarray  # (V, M) uint8, 1 = visible
    pixel_of: np.ndarray  # (V, M, 2) int32 (u, v); -1 where invisible

    def __post_init__(self):
        vis = np.asarray(self.point_vis, dtype=np.uint8)
        pix = np.asarray(self.pixel_of, dtype=np.int32)
        if pix.shape != (*vis.shape, 2):
            raise ValidationError("pixel_of shape must be (V, M, 2)")
        object.__setattr__(self, "point_vis", vis)
        object.__setattr__(self, "pixel_of", pix)

    @property
    def num_views(self) -> int:
        return self.point_vis.shape[0]

    @property
    def num_points(self) -> int:
        return self.point_vis.shape[1]

    def save(self, path: str) -> None:
        """Raw uint8 V x M, row-major (debugging export)."""
        self.point_vis.astype("<u1").tofile(path)


@dataclass(frozen=True)
class ObjectVisibility:
    """Mask-pixel counts per view and object; column index = instance id.

    counts has shape (V, N+1); column 0 is the background count and is
    ignored by fusion.
    """

    counts: np.ndarray  # (V, N+1) int64

    def __post_init__(self):
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))

    @property
    def num_objects(self) -> int:
        return self.counts.shape[1] - 1


def project_point(x: np.ndarray, view: View) -> np.ndarray:
    """Homogeneous pixel K . (R x + t) of a single world point; no division."""
    x = np.asarray(x, dtype=np.float64).reshape(3)
    cam = view.pose.rotation @ x + view.pose.translation
    return view.intrinsics.matrix @ cam


def project_points(points: np.ndarray, view: View) -> np.ndarray:
    """Vectorized project_point: (M, 3) world -> (M, 3) homogeneous pixels."""
    cam = view.pose.world_to_camera(np.asarray(points, dtype=np.float64))
    return cam @ view.intrinsics.matrix.T


def in_fov(u: np.ndarray, intrinsics: CameraIntrinsics) -> bool:
    """True iff the homogeneous pixel lies in front of the camera and on the image."""
    u = np.asarray(u, dtype=np.float64).reshape(3)
    if u[2] <= 0.0:
        return False
    px, py = u[0] / u[2], u[1] / u[2]
    return 0.0 <= px < intrinsics.width and 0.0 <= py < intrinsics.height


def nearest_pixel(u: np.ndarray, intrinsics: CameraIntrinsics) -> tuple[int, int]:
    """Half-up rounding of the dehomogenized pixel, clamped to image bounds."""
    u = np.asarray(u, dtype=np.float64).reshape(3)
    px = int(min(np.floor(u[0] / u[2] + 0.5), intrinsics.width - 1))
    py = int(min(np.floor(u[1] / u[2] + 0.5), intrinsics.height - 1))
    return max(px, 0), max(py, 0)


def is_visible(u: np.ndarray, view: View, cfg: ProjectionConfig) -> bool:
    """Depth-buffer test at the nearest pixel; requires in_fov(u)."""
    u = np.asarray(u, dtype=np.float64).reshape(3)
    if not in_fov(u, view.intrinsics):
        raise ValidationError("is_visible requires a point inside the FOV")
    px, py = nearest_pixel(u, view.intrinsics)
    d = float(view.depth[py, px])
    return d > 0 and abs(u[2] - d) <= cfg.c_thr


def _view_visibility(view: View, points: np.ndarray, cfg: ProjectionConfig) -> tuple[np.ndarray, np.ndarray]:
    m = points.shape[0]
    vis = np.zeros(m, dtype=np.uint8)
    pix = np.full((m, 2), -1, dtype=np.int32)
    if m == 0:
        return vis, pix
    u = project_points(points, view)
    uz = u[:, 2]
    front = uz > 0
    px = np.full(m, -1.0)
    py = np.full(m, -1.0)
    px[front] = u[front, 0] / uz[front]
    py[front] = u[front, 1] / uz[front]
    intr = view.intrinsics
    fov = front & (px >= 0) & (px < intr.width) & (py >= 0) & (py < intr.height)
    if not fov.any():
        return vis, pix
    ix = np.minimum(np.floor(px[fov] + 0.5), intr.width - 1).astype(np.int32)
    iy = np.minimum(np.floor(py[fov] + 0.5), intr.height - 1).astype(np.int32)
    depth = view.depth[iy, ix].astype(np.float64)
    ok = (depth > 0) & (np.abs(uz[fov] - depth) <= cfg.c_thr)
    idx = np.flatnonzero(fov)[ok]
    vis[idx] = 1
    pix[idx, 0] = ix[ok]
    pix[idx, 1] = iy[ok]
    return vis, pix


def build_visibility(scene: Scene, cloud: PointCloud, cfg: ProjectionConfig | None = None,
                     threads: int = 1) -> VisibilityMap:
    """Compose FOV and occlusion filtering over all (view, point) pairs.

    Rows are computed independently per view, so the result does not depend
    on the worker count.
    """
    cfg = cfg or ProjectionConfig()
    rows = parallel_map(lambda v: _view_visibility(v, cloud.points, cfg), scene.views, threads)
    vis = np.stack([r[0] for r in rows], axis=0) if rows else np.zeros((0, len(cloud)), np.uint8)
    pix = np.stack([r[1] for r in rows], axis=0) if rows else np.full((0, len(cloud), 2), -1, np.int32)
    return VisibilityMap(vis, pix)


def object_visibility(scene: Scene) -> ObjectVisibility:
    """Mask-pixel counts per (view, instance id); id 0 collects background."""
    n = scene.num_objects
    counts = np.zeros((scene.num_views, n + 1), dtype=np.int64)
    for v in scene.views:
        counts[v.id] = np.bincount(v.mask2d.reshape(-1).astype(np.int64), minlength=n + 1)[: n + 1]
    return ObjectVisibility(counts)
