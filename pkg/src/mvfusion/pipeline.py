"""End-to-end orchestration: load/generate -> aggregate -> voxelize ->
visibility -> fuse -> scatter -> ground -> evaluate.

Everything here is deterministic in (inputs, flags, seed); worker threads
only parallelize per-view work, never reductions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError
from .fusion import (DenseFeatureMap, FeatureCloud, ObjectFeatureSet, PointFusionResult,
                     ObjectFusionResult, fuse_objectwise, fuse_pointwise,
                     scatter_object_features)
from .grounding import GroundingConfig, instance_segment, refer_segment, semantic_segment
from .metrics import EvalRecord, ap25, iou
from .projection import ProjectionConfig, VisibilityMap, build_visibility, object_visibility
from .prompts import PromptBank, build_context, scene_contexts
from .scene import Mask3D, PointCloud, Scene, aggregate_cloud, voxel_downsample

DEFAULT_VOXEL = 0.02  # meters

FUSION_MODES = ("point", "object")
WEIGHTINGS = ("uniform", "lambda", "g", "lambda-g")


@dataclass(frozen=True)
class FusePipelineConfig:
    fusion: str = "object"
    weighting: str = "lambda-g"
    strategy: str = "scene"
    reduction: str = "max"
    voxel_size: float = DEFAULT_VOXEL
    c_thr: float = 0.02
    threads: int = 1
    # Views contributing features/visibility; the point cloud is always
    # aggregated from the full scene, so points outside the subset's
    # coverage stay in the domain (flagged, never matched). This is what
    # makes incremental-view sweeps measure coverage as well as denoising.
    view_subset: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValidationError(f"unknown fusion mode {self.fusion!r}")
        if self.weighting not in WEIGHTINGS:
            raise ValidationError(f"unknown weighting {self.weighting!r}")


@dataclass(frozen=True)
class FuseOutput:
    feature_cloud: FeatureCloud  # normalized rows, ready for similarity math
    raw_feature_cloud: FeatureCloud  # unnormalized convex combinations
    mask: Mask3D
    visibility: VisibilityMap
    object_result: ObjectFusionResult | None = None
    point_result: PointFusionResult | None = None


def subset_scene(scene: Scene, view_ids: tuple[int, ...]) -> Scene:
    """Scene restricted to the given views, reindexed contiguously."""
    keep = sorted(set(view_ids))
    if not keep:
        raise ValidationError("view subset must not be empty")
    views = []
    for new_id, vid in enumerate(keep):
        if vid < 0 or vid >= scene.num_views:
            raise ValidationError(f"view id {vid} outside scene")
        v = scene.views[vid]
        views.append(replace(v, id=new_id))
    return Scene(views=tuple(views), num_objects=scene.num_objects,
                 object_instance_ids=scene.object_instance_ids)


def point_mode_name(weighting: str) -> str:
    return "uniform" if weighting in ("uniform", "lambda") else "both"


def fuse_scene(scene: Scene, bank: PromptBank,
               dense_maps: list[DenseFeatureMap] | None,
               objfeats: ObjectFeatureSet | None,
               cfg: FusePipelineConfig) -> FuseOutput:
    """The full fusion pipeline over one scene.

    Point mode consumes dense per-view maps; object mode consumes the
    object-level feature set. Either may be None when unused.
    """
    cloud, mask = aggregate_cloud(scene, threads=cfg.threads)
    cloud, mask = voxel_downsample(cloud, mask, cfg.voxel_size)

    feat_scene = scene
    if cfg.view_subset is not None:
        keep = sorted(set(cfg.view_subset))
        feat_scene = subset_scene(scene, cfg.view_subset)
        if dense_maps is not None:
            dense_maps = [dense_maps[v] for v in keep]
        if objfeats is not None:
            objfeats = ObjectFeatureSet(objfeats.features[keep], objfeats.valid[keep])

    vis = build_visibility(feat_scene, cloud, ProjectionConfig(c_thr=cfg.c_thr), threads=cfg.threads)

    contexts = None
    needs_ctx = cfg.fusion == "object" and cfg.weighting in ("g", "lambda-g")
    needs_ctx = needs_ctx or (cfg.fusion == "point" and point_mode_name(cfg.weighting) != "uniform")
    if needs_ctx:
        contexts = scene_contexts(bank, scene, strategy=cfg.strategy, reduction=cfg.reduction)

    object_result = None
    point_result = None
    if cfg.fusion == "object":
        if objfeats is None:
            raise ValidationError("object fusion requires an object-level feature set")
        objvis = object_visibility(feat_scene)
        object_result = fuse_objectwise(objfeats, objvis, contexts, weighting=cfg.weighting)
        raw = scatter_object_features(object_result.features, mask, cloud, object_result.failed)
    else:
        if dense_maps is None:
            raise ValidationError("point fusion requires dense feature maps")
        point_result = fuse_pointwise(cloud, dense_maps, vis,
                                      mode=point_mode_name(cfg.weighting),
                                      labels=mask, contexts=contexts)
        raw = point_result.feature_cloud
    return FuseOutput(feature_cloud=raw.normalized_copy(), raw_feature_cloud=raw, mask=mask,
                      visibility=vis, object_result=object_result, point_result=point_result)


def transfer_labels(gt_cloud: PointCloud, gt_mask: Mask3D, cloud: PointCloud) -> Mask3D:
    """Ground-truth labels for an arbitrary cloud via nearest-gt-point lookup."""
    if len(gt_cloud) == 0:
        raise ValidationError("empty ground-truth cloud")
    if len(cloud) == len(gt_cloud) and np.allclose(cloud.points, gt_cloud.points, atol=1e-9):
        return gt_mask
    tree = cKDTree(gt_cloud.points)
    _, idx = tree.query(cloud.points, k=1)
    return Mask3D(gt_mask.labels[idx])


def referring_records(fc: FeatureCloud, gt_mask: Mask3D, bank: PromptBank, scene: Scene,
                      gcfg: GroundingConfig, strategy: str = "scene",
                      reduction: str = "max", query_prefix: str = "") -> list[EvalRecord]:
    """One referring query per in-scene object; IoU against the 3D mask.

    Table points (label 0) are excluded from every query's domain, matching
    the reference protocol where the table is filtered out of the cloud
    before any similarity computation.
    """
    domain = gt_mask.labels != 0
    records = []
    for n in range(1, scene.num_objects + 1):
        ctx = build_context(bank, scene, n, strategy=strategy, reduction=reduction)
        seg = refer_segment(fc, ctx, gcfg)
        pred = (seg.labels == 1) & domain
        gt = gt_mask.labels == n
        records.append(EvalRecord(
            query_id=f"{query_prefix}obj{n}",
            iou=iou(pred, gt),
            pred_count=int(np.count_nonzero(pred)),
            gt_count=int(np.count_nonzero(gt)),
            class_id=scene.catalog_id(n),
        ))
    return records


def semantic_records(fc: FeatureCloud, gt_mask: Mask3D, bank: PromptBank, scene: Scene,
                     query_prefix: str = "") -> list[EvalRecord]:
    """Argmax semantic segmentation against the scene's mean prompts.

    Class c of the argmax corresponds to local object c (prompt order);
    label-0 (table) points are excluded from every query's domain.
    """
    prompts = np.stack([bank.mean_prompt(scene.catalog_id(n))
                        for n in range(1, scene.num_objects + 1)])
    seg = semantic_segment(fc, prompts)
    domain = gt_mask.labels != 0
    records = []
    for n in range(1, scene.num_objects + 1):
        pred = (seg.labels == n) & domain
        gt = (gt_mask.labels == n) & domain
        records.append(EvalRecord(
            query_id=f"{query_prefix}class{n}",
            iou=iou(pred, gt),
            pred_count=int(np.count_nonzero(pred)),
            gt_count=int(np.count_nonzero(gt)),
            class_id=scene.catalog_id(n),
        ))
    return records


def instance_metrics(fc: FeatureCloud, gt_mask: Mask3D, gcfg: GroundingConfig) -> dict:
    seg = instance_segment(fc, gcfg)
    pred = seg.labels.copy()
    gt = gt_mask.labels.copy()
    score = ap25(pred, gt)
    clusters = len([k for k in np.unique(pred) if k != 0])
    return {"ap25": score, "num_clusters": clusters,
            "num_gt_instances": len([k for k in np.unique(gt) if k != 0])}


def view_count_schedule(num_views: int) -> list[int]:
    """{2, 4, 8, ...} capped at and always including the full view count."""
    sizes = []
    k = 2
    while k < num_views:
        sizes.append(k)
        k *= 2
    sizes.append(num_views)
    return sizes
