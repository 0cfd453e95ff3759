import numpy as np

from mvfusion.scene import CameraIntrinsics, Pose, View


def identity_view(depth, mask=None, fx=1.0, fy=1.0, cx=0.0, cy=0.0, view_id=0):
    """View with identity pose; depth given as a 2D array."""
    depth = np.asarray(depth, dtype=np.float32)
    h, w = depth.shape
    if mask is None:
        mask = np.zeros((h, w), dtype=np.uint16)
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h)
    return View(id=view_id, intrinsics=intr, pose=Pose.identity(),
                depth=depth, mask2d=np.asarray(mask, dtype=np.uint16))
