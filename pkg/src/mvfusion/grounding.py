"""Open-vocabulary inference over feature clouds.

Semantic segmentation takes the argmax of cosine similarity against K class
prompts. Referring segmentation converts similarities against [positive,
negatives] into softmax probabilities at temperature gamma and labels a
point either by thresholding the positive probability or by positive-vs-
max-negative comparison. Instance segmentation runs DBSCAN in feature space
(Euclidean distance on unit-normalized rows). Table points are removed with
seeded RANSAC plane fitting.

Flagged rows of the input cloud (no fused feature) are never matched: they
get label 0 and score 0 everywhere.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import NumericalError, ValidationError
from .fusion import FLAG_OK, FeatureCloud
from .prompts import QueryContext
from .scene import PointCloud
from .util import unit_rows

# paper-backed defaults: 0.95 suits fused-target clouds, 0.7 distilled
# external predictions
S_THR_FUSED = 0.95
S_THR_EXTERNAL = 0.7
REFER_RULES = ("threshold", "pos-vs-neg")


@dataclass(frozen=True)
class RansacConfig:
    distance_thr: float = 0.1  # meters
    sample_n: int = 3
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.distance_thr <= 0:
            raise ValidationError("RANSAC distance threshold must be > 0")
        if self.sample_n != 3:
            raise ValidationError("plane fitting requires sample_n = 3")
        if self.iterations < 1:
            raise ValidationError("RANSAC needs at least one iteration")


@dataclass(frozen=True)
class GroundingConfig:
    gamma: float = 0.1  # softmax temperature
    s_thr: float = S_THR_FUSED  # positive-probability threshold
    rule: str = "threshold"
    cluster_eps: float = 0.01
    cluster_min_samples: int = 2
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValidationError("temperature gamma must be > 0")
        if not 0.0 < self.s_thr < 1.0:
            raise ValidationError("s_thr must lie in (0, 1)")
        if self.rule not in REFER_RULES:
            raise ValidationError(f"unknown referring rule {self.rule!r}")
        if self.cluster_eps <= 0:
            raise ValidationError("cluster_eps must be > 0")
        if self.cluster_min_samples < 1:
            raise ValidationError("cluster_min_samples must be >= 1")


def default_s_thr(provenance: str) -> float:
    return S_THR_FUSED if provenance == "fused-target" else S_THR_EXTERNAL


@dataclass(frozen=True)
class SegmentationResult:
    labels: np.ndarray  # (M,) int32: class id / {0,1} / instance id (0 = noise)
    scores: np.ndarray  # (M,) float64

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int32).reshape(-1)
        sc = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if lab.shape != sc.shape:
            raise ValidationError("labels and scores must have equal length")
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "scores", sc)


def _valid_rows(fc: FeatureCloud) -> np.ndarray:
    return fc.flags == FLAG_OK


def _unit_features(fc: FeatureCloud, keep: np.ndarray) -> np.ndarray:
    feats = fc.features[keep]
    return feats if fc.normalized else unit_rows(feats)


def semantic_segment(fc: FeatureCloud, prompts: np.ndarray) -> SegmentationResult:
    """Per-point argmax class over K prompts; classes are 1-based.

    Ties resolve to the lowest class id; flagged rows get label 0.
    """
    q = np.asarray(prompts, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.shape[0] < 1:
        raise ValidationError("need at least one class prompt")
    if q.shape[1] != fc.dim:
        raise ValidationError("prompt dimension does not match the cloud")
    labels = np.zeros(len(fc.cloud), dtype=np.int32)
    scores = np.zeros(len(fc.cloud))
    keep = _valid_rows(fc)
    if keep.any():
        sims = _unit_features(fc, keep) @ unit_rows(q).T  # (m, K)
        best = sims.argmax(axis=1)  # argmax ties -> lowest index
        labels[keep] = best.astype(np.int32) + 1
        scores[keep] = sims[np.arange(sims.shape[0]), best]
    return SegmentationResult(labels, scores)


def refer_probabilities(fc: FeatureCloud, ctx: QueryContext,
                        gamma: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Softmax over cosine similarities to [positive, negatives] at 1/gamma.

    Returns (rho_pos (M,), p_neg (M, n_neg)). With no negatives rho_pos is 1
    on every unflagged row. Flagged rows get all-zero probabilities.
    """
    if gamma <= 0:
        raise ValidationError("temperature gamma must be > 0")
    if np.linalg.norm(ctx.positive) == 0.0:
        raise NumericalError("query positive has zero norm")
    m = len(fc.cloud)
    rho = np.zeros(m)
    pneg = np.zeros((m, ctx.num_negatives))
    keep = _valid_rows(fc)
    if not keep.any():
        return rho, pneg
    z = _unit_features(fc, keep)
    queries = np.concatenate([ctx.positive[None, :], ctx.negatives], axis=0)
    sims = z @ unit_rows(queries).T / gamma  # (m, 1 + n_neg)
    sims -= sims.max(axis=1, keepdims=True)
    e = np.exp(sims)
    p = e / e.sum(axis=1, keepdims=True)
    rho[keep] = p[:, 0]
    pneg[keep] = p[:, 1:]
    return rho, pneg


def raw_positive_cosine(fc: FeatureCloud, ctx: QueryContext) -> np.ndarray:
    cos = np.zeros(len(fc.cloud))
    keep = _valid_rows(fc)
    if keep.any():
        cos[keep] = _unit_features(fc, keep) @ unit_rows(ctx.positive)
    return cos


def refer_segment(fc: FeatureCloud, ctx: QueryContext,
                  cfg: GroundingConfig | None = None) -> SegmentationResult:
    """Binary referring segmentation under the configured decision rule.

    threshold:   label 1 iff rho_pos > s_thr; with an empty negative set the
                 raw positive cosine is thresholded instead.
    pos-vs-neg:  label 1 iff rho_pos > max_j p_neg_j (needs >= 1 negative).
    """
    cfg = cfg or GroundingConfig()
    if cfg.rule == "pos-vs-neg" and ctx.num_negatives == 0:
        raise ValidationError("pos-vs-neg rule requires at least one negative prompt")
    if cfg.rule == "threshold" and ctx.num_negatives == 0:
        scores = raw_positive_cosine(fc, ctx)
        labels = (scores > cfg.s_thr) & _valid_rows(fc)
        return SegmentationResult(labels.astype(np.int32), scores)
    rho, pneg = refer_probabilities(fc, ctx, cfg.gamma)
    if cfg.rule == "threshold":
        labels = rho > cfg.s_thr
    else:
        labels = rho > pneg.max(axis=1)
    labels &= _valid_rows(fc)
    return SegmentationResult(labels.astype(np.int32), rho)


def dbscan_labels(points: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """Deterministic DBSCAN: labels in {0 = noise, 1, 2, ...}.

    A core point has >= min_samples neighbors within eps, itself included.
    Cluster ids follow the order in which the first core point of each
    cluster is encountered while scanning ascending point indices; border
    points join the first cluster that reaches them.
    """
    x = np.asarray(points, dtype=np.float64)
    m = x.shape[0]
    labels = np.zeros(m, dtype=np.int32)
    if m == 0:
        return labels
    tree = cKDTree(x)
    neighbors = tree.query_ball_point(x, r=eps, return_sorted=True)
    core = np.array([len(nb) >= min_samples for nb in neighbors])
    visited = np.zeros(m, dtype=bool)
    next_id = 0
    for i in range(m):
        if visited[i] or not core[i]:
            continue
        next_id += 1
        queue = deque([i])
        visited[i] = True
        labels[i] = next_id
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for k in neighbors[j]:
                if labels[k] == 0:
                    labels[k] = next_id
                if not visited[k]:
                    visited[k] = True
                    queue.append(k)
    return labels


def instance_segment(fc: FeatureCloud, cfg: GroundingConfig | None = None) -> SegmentationResult:
    """DBSCAN over feature space; flagged rows are noise (label 0)."""
    cfg = cfg or GroundingConfig()
    labels = np.zeros(len(fc.cloud), dtype=np.int32)
    keep = _valid_rows(fc)
    if keep.any():
        feats = fc.features[keep] if fc.normalized else unit_rows(fc.features[keep])
        labels[keep] = dbscan_labels(feats, cfg.cluster_eps, cfg.cluster_min_samples)
    scores = (labels > 0).astype(np.float64)
    return SegmentationResult(labels, scores)


@dataclass(frozen=True)
class PlaneModel:
    normal: np.ndarray  # unit normal
    offset: float  # plane: normal . x + offset = 0
    inliers: int

    def distances(self, points: np.ndarray) -> np.ndarray:
        return np.abs(points @ self.normal + self.offset)


def _plane_from_points(p: np.ndarray) -> tuple[np.ndarray, float] | None:
    n = np.cross(p[1] - p[0], p[2] - p[0])
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None  # collinear sample
    n = n / norm
    return n, float(-np.dot(n, p[0]))


def remove_table(cloud: PointCloud, cfg: RansacConfig | None = None) -> tuple[PointCloud, PlaneModel]:
    """RANSAC plane removal: best 3-point plane by inlier count, seeded.

    Returns the cloud minus the plane inliers and the winning plane model.
    Ties keep the first model found.
    """
    cfg = cfg or RansacConfig()
    pts = cloud.points
    m = pts.shape[0]
    if m < cfg.sample_n:
        raise ValidationError(f"need at least {cfg.sample_n} points for RANSAC")
    rng = np.random.default_rng(cfg.seed)
    best: tuple[np.ndarray, float] | None = None
    best_count = -1
    for _ in range(cfg.iterations):
        idx = rng.choice(m, size=cfg.sample_n, replace=False)
        model = _plane_from_points(pts[idx])
        if model is None:
            continue
        n, d = model
        count = int(np.count_nonzero(np.abs(pts @ n + d) <= cfg.distance_thr))
        if count > best_count:
            best = (n, d)
            best_count = count
    if best is None:
        raise NumericalError("all RANSAC samples were degenerate (collinear points)")
    n, d = best
    plane = PlaneModel(normal=n, offset=d, inliers=best_count)
    keep = plane.distances(pts) > cfg.distance_thr
    kept_colors = cloud.colors[keep] if cloud.colors is not None else None
    return PointCloud(pts[keep], kept_colors), plane


def save_heatmap_ply(path: str, fc: FeatureCloud, scores: np.ndarray) -> None:
    """ASCII PLY colored gray -> red by score; flagged (table) points excluded."""
    from .sceneio import save_ply

    s = np.clip(np.asarray(scores, dtype=np.float64).reshape(-1), 0.0, 1.0)
    keep = _valid_rows(fc)
    pts = fc.cloud.points[keep]
    sk = s[keep]
    colors = np.stack([
        np.round(128 + 127 * sk),
        np.round(128 * (1.0 - sk)),
        np.round(128 * (1.0 - sk)),
    ], axis=1).astype(np.uint8)
    save_ply(path, PointCloud(pts), colors)
