"""Multi-view feature fusion with semantic-informativeness view weighting.

The fused feature of a point is the weighted average of the 2D features it
back-projects to:

    z3d_i = sum_v z2d_{v,i} * w_{v,i} / sum_v w_{v,i}

where w decomposes into a binary visibility term and a semantic
informativeness term, w = vis * G. G is the clipped margin between a
feature's cosine similarity to its object's positive prompt and its best
(or mean) similarity to any negative prompt:

    G = max(0, cos(z, q_pos) - reduce_{q in negatives} cos(z, q))

Object-wise fusion applies the same average to one feature per (view,
object) pair and broadcasts the result over the object's 3D mask, which
keeps features constant inside object boundaries.

Accumulation runs in ascending view id with compensated summation, entries
with zero weight are skipped outright, and outputs are the raw weighted
means (convex combinations of the inputs); normalization is a separate,
explicit step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .projection import ObjectVisibility, VisibilityMap
from .prompts import QueryContext
from .scene import Mask3D, PointCloud, View
from .util import kahan_add, unit_rows

POINT_MODES = ("uniform", "informativeness", "both")
OBJECT_WEIGHTINGS = ("uniform", "lambda", "g", "lambda-g")
PROVENANCE_TAGS = ("fused-target", "external-prediction")

# flags byte in FeatureCloud / fused-cloud files
FLAG_OK = 0
FLAG_ZERO_WEIGHT = 1


@dataclass(frozen=True)
class DenseFeatureMap:
    """Per-view feature grid with an integer pixel-to-cell mapping."""

    grid: np.ndarray  # (H_f, W_f, C) float64
    image_height: int
    image_width: int

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 3:
            raise ValidationError("dense grid must be (H_f, W_f, C)")
        hf, wf, _ = grid.shape
        if self.image_height % hf or self.image_width % wf:
            raise ValidationError("dense grid must divide the image dimensions")
        object.__setattr__(self, "grid", grid)

    @property
    def dim(self) -> int:
        return self.grid.shape[2]

    def sample(self, pixels: np.ndarray) -> np.ndarray:
        """Features at integer pixels (n, 2) as (u, v), nearest grid cell."""
        pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        sy = self.image_height // self.grid.shape[0]
        sx = self.image_width // self.grid.shape[1]
        return self.grid[pix[:, 1] // sy, pix[:, 0] // sx]

    def save(self, path: str) -> None:
        hf, wf, c = self.grid.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<III", hf, wf, c))
            fh.write(self.grid.astype("<f4").tobytes())

    @staticmethod
    def load(path: str, image_height: int, image_width: int) -> "DenseFeatureMap":
        with open(path, "rb") as fh:
            hf, wf, c = struct.unpack("<III", fh.read(12))
            data = np.frombuffer(fh.read(), dtype="<f4")
        if data.size != hf * wf * c:
            raise ValidationError(f"{path}: dense payload size mismatch")
        return DenseFeatureMap(data.reshape(hf, wf, c).astype(np.float64),
                               image_height=image_height, image_width=image_width)


@dataclass(frozen=True)
class ObjectFeatureSet:
    """One feature per (view, object) with a validity bitmap; row j = object j+1."""

    features: np.ndarray  # (V, N, C) float64
    valid: np.ndarray  # (V, N) bool

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if feats.ndim != 3:
            raise ValidationError("object features must be (V, N, C)")
        if valid.shape != feats.shape[:2]:
            raise ValidationError("validity bitmap must be (V, N)")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "valid", valid)

    @property
    def num_views(self) -> int:
        return self.features.shape[0]

    @property
    def num_objects(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    def save(self, path: str) -> None:
        v, n, c = self.features.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<III", v, n, c))
            fh.write(self.valid.astype("<u1").tobytes())
            fh.write(self.features.astype("<f4").tobytes())

    @staticmethod
    def load(path: str) -> "ObjectFeatureSet":
        with open(path, "rb") as fh:
            v, n, c = struct.unpack("<III", fh.read(12))
            valid = np.frombuffer(fh.read(v * n), dtype="<u1")
            data = np.frombuffer(fh.read(), dtype="<f4")
        if valid.size != v * n or data.size != v * n * c:
            raise ValidationError(f"{path}: object payload size mismatch")
        return ObjectFeatureSet(data.reshape(v, n, c).astype(np.float64),
                                valid.reshape(v, n).astype(bool))


@dataclass(frozen=True)
class FusionWeights:
    """Final weights plus their visibility/informativeness decomposition."""

    omega: np.ndarray  # (V, M) point mode or (V, N) object mode
    lam: np.ndarray  # same shape; visibility term
    g: np.ndarray | None = None  # same shape; informativeness term, None = uniform

    def __post_init__(self):
        if np.any(self.omega < 0):
            raise ValidationError("fusion weights must be non-negative")
        if np.any((np.asarray(self.lam) == 0) & (self.omega != 0)):
            raise ValidationError("weights must vanish wherever visibility is zero")


@dataclass(frozen=True)
class FeatureCloud:
    """A point cloud with one feature row per point.

    flags[i] != 0 marks a point with no fused contribution (zero feature);
    such rows are skipped by grounding and loss computations.
    """

    cloud: PointCloud
    features: np.ndarray  # (M, C) float64
    flags: np.ndarray | None = None  # (M,) uint8
    provenance: str = "fused-target"
    normalized: bool = False

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(self.cloud):
            raise ValidationError("features must be (M, C) aligned with the cloud")
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features must be finite")
        flags = self.flags
        if flags is None:
            flags = np.zeros(feats.shape[0], dtype=np.uint8)
        flags = np.asarray(flags, dtype=np.uint8).reshape(-1)
        if flags.shape[0] != feats.shape[0]:
            raise ValidationError("flags length must equal M")
        if self.provenance not in PROVENANCE_TAGS:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        if self.normalized:
            norms = np.linalg.norm(feats[flags == FLAG_OK], axis=1)
            if norms.size and np.any(np.abs(norms - 1.0) > 1e-5):
                raise ValidationError("cloud flagged normalized but rows are not unit")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "flags", flags)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def normalized_copy(self) -> "FeatureCloud":
        feats = unit_rows(self.features)
        flags = self.flags.copy()
        flags[np.linalg.norm(feats, axis=1) == 0.0] = FLAG_ZERO_WEIGHT
        return FeatureCloud(self.cloud, feats, flags, self.provenance, normalized=True)

    def save(self, path: str) -> None:
        m, c = self.features.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<II", m, c))
            fh.write(self.cloud.points.astype("<f4").tobytes())
            fh.write(self.features.astype("<f4").tobytes())
            fh.write(self.flags.astype("<u1").tobytes())

    @staticmethod
    def load(path: str, provenance: str = "fused-target") -> "FeatureCloud":
        with open(path, "rb") as fh:
            m, c = struct.unpack("<II", fh.read(8))
            pts = np.frombuffer(fh.read(m * 12), dtype="<f4")
            feats = np.frombuffer(fh.read(m * c * 4), dtype="<f4")
            flags = np.frombuffer(fh.read(), dtype="<u1")
        if pts.size != m * 3 or feats.size != m * c or flags.size != m:
            raise ValidationError(f"{path}: fused-cloud payload size mismatch")
        feats = feats.reshape(m, c).astype(np.float64)
        norms = np.linalg.norm(feats[flags == FLAG_OK], axis=1) if m else np.empty(0)
        normalized = bool(norms.size == 0 or np.all(np.abs(norms - 1.0) <= 1e-5))
        return FeatureCloud(PointCloud(pts.reshape(m, 3).astype(np.float64)), feats,
                            flags.copy(), provenance, normalized=normalized)


@dataclass(frozen=True)
class CropRegion:
    """Tight axis-aligned box around an object's 2D mask, plus the in-box mask."""

    view_id: int
    object_id: int
    x_min: int
    y_min: int
    width: int
    height: int
    mask: np.ndarray  # (height, width) bool

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError("crop box must be non-empty")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.height, self.width):
            raise ValidationError("crop mask shape must match the box")
        object.__setattr__(self, "mask", mask)


def informativeness_rows(feats: np.ndarray, ctx: QueryContext) -> np.ndarray:
    """Vectorized Eq.-style informativeness for feature rows; zero rows get 0.

    With an empty negative set the metric degrades to max(0, cos(z, q_pos)).
    """
    z = unit_rows(np.asarray(feats, dtype=np.float64))
    if z.ndim == 1:
        z = z[None, :]
    pos = z @ unit_rows(ctx.positive)
    if ctx.num_negatives == 0:
        neg = np.zeros(z.shape[0])
    else:
        sims = z @ unit_rows(ctx.negatives).T
        neg = sims.max(axis=1) if ctx.reduction == "max" else sims.mean(axis=1)
    g = np.maximum(0.0, pos - neg)
    g[np.linalg.norm(z, axis=1) == 0.0] = 0.0
    return g


def point_informativeness(z: np.ndarray, ctx: QueryContext) -> float:
    """Clipped positive-vs-negative cosine margin of one point feature."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if np.linalg.norm(z) == 0.0:
        raise NumericalError("informativeness of a zero feature is undefined")
    return float(informativeness_rows(z[None, :], ctx)[0])


def object_informativeness(z: np.ndarray, ctx: QueryContext) -> float:
    """Eq.-4 contract: identical metric applied to an object-level feature."""
    return point_informativeness(z, ctx)


@dataclass(frozen=True)
class PointFusionResult:
    feature_cloud: FeatureCloud
    weights: FusionWeights


@dataclass(frozen=True)
class ObjectFusionResult:
    features: np.ndarray  # (N, C); zero rows for failed objects
    weights: FusionWeights  # (V, N)
    failed: dict[int, str] = field(default_factory=dict)  # local id -> reason
    used_lambda_fallback: tuple[int, ...] = ()


def _weighted_mean(features_per_view: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Kahan-accumulated weighted mean over axis 0 (views, ascending).

    features_per_view: (V, M, C); weights: (V, M). Entries with zero weight
    are skipped, so their feature values can never leak into the result.
    Returns (mean (M, C), total_weight (M,)); rows with zero total weight
    are left as zeros.
    """
    v, m, c = features_per_view.shape
    num = np.zeros((m, c))
    num_comp = np.zeros((m, c))
    den = np.zeros(m)
    den_comp = np.zeros(m)
    for vi in range(v):
        w = weights[vi]
        nz = w > 0
        if not nz.any():
            continue
        contrib = np.zeros((m, c))
        contrib[nz] = features_per_view[vi][nz] * w[nz, None]
        kahan_add(num, num_comp, contrib)
        wv = np.zeros(m)
        wv[nz] = w[nz]
        kahan_add(den, den_comp, wv)
    out = np.zeros((m, c))
    pos = den > 0
    out[pos] = num[pos] / den[pos, None]
    return out, den


def fuse_pointwise(cloud: PointCloud, dense_maps: list[DenseFeatureMap], vis: VisibilityMap,
                   mode: str = "uniform", labels: Mask3D | None = None,
                   contexts: dict[int, QueryContext] | None = None) -> PointFusionResult:
    """Fuse dense per-view features into one feature per point.

    mode 'uniform' weights every visible view equally; 'informativeness' and
    'both' multiply visibility by the per-(view, point) metric computed on
    the sampled features (identical here, since sampling is only defined at
    visible pixels). Background points (label 0) have no positive prompt and
    keep visibility weights. Points with zero total weight get a zero
    feature and a nonzero flag.
    """
    if mode not in POINT_MODES:
        raise ValidationError(f"unknown point fusion mode {mode!r}")
    v, m = vis.point_vis.shape
    if len(dense_maps) != v:
        raise ValidationError("need one dense map per view")
    if m != len(cloud):
        raise ValidationError("visibility map does not match the cloud")
    dims = {dm.dim for dm in dense_maps}
    if len(dims) > 1:
        raise ValidationError("dense maps disagree on feature dimension")
    c = dims.pop() if dims else 0
    needs_g = mode in ("informativeness", "both")
    if needs_g and (labels is None or contexts is None):
        raise ValidationError(f"mode {mode!r} requires labels and query contexts")
    if labels is not None and len(labels) != m:
        raise ValidationError("labels length must equal M")

    lam = vis.point_vis.astype(np.float64)
    g = np.ones((v, m)) if needs_g else None
    omega = np.zeros((v, m))
    num = np.zeros((m, c))
    num_comp = np.zeros((m, c))
    den = np.zeros(m)
    den_comp = np.zeros(m)
    for vi in range(v):
        idx = np.flatnonzero(vis.point_vis[vi])
        if idx.size == 0:
            continue
        z = dense_maps[vi].sample(vis.pixel_of[vi, idx])  # (k, C)
        if needs_g:
            w = np.ones(idx.size)
            lab_sel = labels.labels[idx]
            for n, ctx in contexts.items():
                rows = np.flatnonzero(lab_sel == n)
                if rows.size:
                    w[rows] = informativeness_rows(z[rows], ctx)
            g[vi, idx] = w
        else:
            w = np.ones(idx.size)
        omega[vi, idx] = w
        keep = w > 0
        if not keep.any():
            continue
        sub = idx[keep]
        # compensated (Kahan) update restricted to the touched rows; entries
        # with zero weight never reach the accumulator state
        contrib = z[keep] * w[keep, None]
        base = num[sub]
        y = contrib - num_comp[sub]
        t = base + y
        num_comp[sub] = (t - base) - y
        num[sub] = t
        base_w = den[sub]
        yw = w[keep] - den_comp[sub]
        tw = base_w + yw
        den_comp[sub] = (tw - base_w) - yw
        den[sub] = tw

    fused = np.zeros((m, c))
    pos = den > 0
    fused[pos] = num[pos] / den[pos, None]
    flags = np.where(pos, FLAG_OK, FLAG_ZERO_WEIGHT).astype(np.uint8)
    fc = FeatureCloud(cloud, fused, flags, provenance="fused-target")
    return PointFusionResult(fc, FusionWeights(omega=omega, lam=lam, g=g))


def fuse_objectwise(objfeats: ObjectFeatureSet, objvis: ObjectVisibility,
                    contexts: dict[int, QueryContext] | None = None,
                    weighting: str = "lambda-g") -> ObjectFusionResult:
    """Fuse object-level features across views under the chosen weighting.

    'uniform' counts every valid view once, 'lambda' weights by visible mask
    pixels, 'g' by the informativeness metric, 'lambda-g' by their product.
    Objects whose every view clips to G = 0 fall back to lambda weights; an
    object with no valid view (or no positive weight after fallback) gets a
    zero row and an entry in `failed`.
    """
    if weighting not in OBJECT_WEIGHTINGS:
        raise ValidationError(f"unknown object weighting {weighting!r}")
    v, n, c = objfeats.features.shape
    if objvis.counts.shape != (v, n + 1):
        raise ValidationError("object visibility does not match feature set")
    needs_g = weighting in ("g", "lambda-g")
    if needs_g and contexts is None:
        raise ValidationError(f"weighting {weighting!r} requires query contexts")

    # A marked-valid view with zero mask pixels carries no visible evidence;
    # demote it so validity and the pixel-count term agree.
    valid = objfeats.valid & (objvis.counts[:, 1:] > 0)
    lam = objvis.counts[:, 1:].astype(np.float64) * valid  # (V, N), id n -> column n-1

    g = None
    if needs_g:
        g = np.zeros((v, n))
        for j in range(n):
            ctx = contexts.get(j + 1)
            if ctx is None:
                raise ValidationError(f"missing query context for object {j + 1}")
            rows = np.flatnonzero(valid[:, j])
            if rows.size:
                g[rows, j] = informativeness_rows(objfeats.features[rows, j], ctx)

    if weighting == "uniform":
        omega = valid.astype(np.float64)
    elif weighting == "lambda":
        omega = lam.copy()
    elif weighting == "g":
        omega = valid * g
    else:
        omega = lam * g

    failed: dict[int, str] = {}
    fallback: list[int] = []
    for j in range(n):
        if not valid[:, j].any():
            failed[j + 1] = "object not valid in any view"
            omega[:, j] = 0.0
            continue
        if omega[:, j].sum() == 0.0 and needs_g:
            omega[:, j] = lam[:, j]  # all views clipped: fall back to pixel counts
            fallback.append(j + 1)
        if omega[:, j].sum() == 0.0:
            failed[j + 1] = "no view with positive fusion weight"

    fused, _ = _weighted_mean(objfeats.features, omega)
    return ObjectFusionResult(features=fused, weights=FusionWeights(omega=omega, lam=lam, g=g),
                              failed=failed, used_lambda_fallback=tuple(fallback))


def scatter_object_features(object_features: np.ndarray, mask: Mask3D, cloud: PointCloud,
                            failed: dict[int, str] | None = None) -> FeatureCloud:
    """Broadcast per-object rows over the 3D mask: z_i = z_{n_i}.

    Label-0 points and failed objects get a zero feature and a nonzero flag.
    """
    feats = np.asarray(object_features, dtype=np.float64)
    n, c = feats.shape
    lab = mask.labels
    if len(mask) != len(cloud):
        raise ValidationError("mask length must match cloud")
    if lab.size and lab.max() > n:
        raise ValidationError(f"label {int(lab.max())} exceeds object count {n}")
    out = np.zeros((len(cloud), c))
    flags = np.full(len(cloud), FLAG_ZERO_WEIGHT, dtype=np.uint8)
    bad = set((failed or {}).keys())
    for j in range(1, n + 1):
        sel = lab == j
        if not sel.any():
            continue
        if j in bad:
            continue
        out[sel] = feats[j - 1]
        flags[sel] = FLAG_OK
    return FeatureCloud(cloud, out, flags, provenance="fused-target")


def crop_region(view: View, object_id: int) -> CropRegion:
    """Tight bounding box + in-box binary mask of an object in one view."""
    sel = view.mask2d == object_id
    if not sel.any():
        raise ValidationError(f"object {object_id} not visible in view {view.id}")
    rows = np.flatnonzero(sel.any(axis=1))
    cols = np.flatnonzero(sel.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return CropRegion(view_id=view.id, object_id=object_id,
                      x_min=x0, y_min=y0, width=x1 - x0 + 1, height=y1 - y0 + 1,
                      mask=sel[y0:y1 + 1, x0:x1 + 1])


def distill_loss(pred: FeatureCloud, target: FeatureCloud) -> float:
    """Mean cosine distance 1 - cos(pred_i, target_i) over unflagged rows."""
    if pred.features.shape != target.features.shape:
        raise ValidationError("prediction and target clouds must share (M, C)")
    keep = (pred.flags == FLAG_OK) & (target.flags == FLAG_OK)
    if not keep.any():
        raise ValidationError("no unflagged rows to compare")
    a, b = pred.features[keep], target.features[keep]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise NumericalError("unflagged zero-norm feature row")
    cos = np.sum(a * b, axis=1) / (na * nb)
    return float(np.mean(1.0 - cos))
