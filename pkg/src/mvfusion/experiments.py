"""Reusable experiment protocols over the synthetic suite.

Two studies mirror the fusion ablations: a corruption study comparing
(object, lambda-g) / (object, uniform) / (point, uniform) referring mIoU
under view corruption, and a view-count sweep measuring precision as
viewpoints are added incrementally. Scene geometry is fixed per scene
index; feature seeds re-draw noise and corruption. Workers parallelize
over scenes only, so results are independent of thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import fuse_objectwise, fuse_pointwise, scatter_object_features
from .grounding import GroundingConfig, refer_segment
from .metrics import iou
from .pipeline import view_count_schedule
from .projection import ProjectionConfig, build_visibility, object_visibility
from .prompts import scene_contexts
from .scene import aggregate_cloud, voxel_downsample
from .synth import SynthConfig, gen_scene, gen_view_features, make_concept_bank
from .util import default_threads, parallel_map

SUITE_CONFIGS = (("object", "lambda-g"), ("object", "uniform"), ("point", "uniform"))


@dataclass(frozen=True)
class CorruptionSuiteConfig:
    num_scenes: int = 64
    num_seeds: int = 20
    num_objects: int = 6
    num_views: int = 16
    embed_dim: int = 32
    sigma_feat: float = 0.1
    corruption: float = 0.4
    voxel_size: float = 0.02
    s_thr: float = 0.95
    gamma: float = 0.1
    scene_seed_base: int = 1000
    feature_seed_base: int = 50_000
    image_width: int = 64
    image_height: int = 48
    focal: float = 56.0
    camera_radius: float = 1.2
    threads: int = field(default_factory=default_threads)

    def synth_config(self, scene_index: int) -> SynthConfig:
        return SynthConfig(
            seed=self.scene_seed_base + scene_index, num_objects=self.num_objects,
            num_views=self.num_views, embed_dim=self.embed_dim,
            sigma_feat=self.sigma_feat, corruption=self.corruption,
            image_width=self.image_width, image_height=self.image_height,
            focal=self.focal, camera_radius=self.camera_radius,
        )


@dataclass
class CorruptionSuiteResult:
    # config label -> (num_seeds,) mIoU averaged over scenes
    miou_per_seed: dict[str, np.ndarray]
    corrupted_pairs: int
    corrupted_zero_weight: int
    corrupted_zero_g: int

    def seed_averaged(self) -> dict[str, float]:
        return {k: float(v.mean()) for k, v in self.miou_per_seed.items()}


@dataclass
class _SceneBundle:
    scene: object
    bank: object
    cloud: object
    mask: object
    vis: object
    objvis: object
    contexts: dict


def _prepare(synth_cfg: SynthConfig, voxel_size: float) -> _SceneBundle:
    scene, _ = gen_scene(synth_cfg)
    bank = make_concept_bank(synth_cfg)
    cloud, mask = aggregate_cloud(scene)
    cloud, mask = voxel_downsample(cloud, mask, voxel_size)
    vis = build_visibility(scene, cloud, ProjectionConfig())
    objvis = object_visibility(scene)
    contexts = scene_contexts(bank.prompt_bank, scene)
    return _SceneBundle(scene, bank, cloud, mask, vis, objvis, contexts)


def _referring_miou(fc, bundle: _SceneBundle, gcfg: GroundingConfig) -> float:
    # table points are outside the referring domain (reference protocol
    # filters the table from the cloud before similarity computation)
    scene = bundle.scene
    domain = bundle.mask.labels != 0
    ious = []
    for n in range(1, scene.num_objects + 1):
        seg = refer_segment(fc, bundle.contexts[n], gcfg)
        ious.append(iou((seg.labels == 1) & domain, bundle.mask.labels == n))
    return float(np.mean(ious))


def _fuse_config(bundle: _SceneBundle, feats, fusion: str, weighting: str):
    if fusion == "object":
        res = fuse_objectwise(feats.objects, bundle.objvis, bundle.contexts, weighting)
        fc = scatter_object_features(res.features, bundle.mask, bundle.cloud, res.failed)
        return fc.normalized_copy(), res
    mode = "uniform" if weighting in ("uniform", "lambda") else "both"
    res = fuse_pointwise(bundle.cloud, feats.dense, bundle.vis, mode,
                         labels=bundle.mask, contexts=bundle.contexts)
    return res.feature_cloud.normalized_copy(), res


def run_corruption_suite(cfg: CorruptionSuiteConfig) -> CorruptionSuiteResult:
    gcfg = GroundingConfig(gamma=cfg.gamma, s_thr=cfg.s_thr, rule="threshold")
    labels = [f"{f}/{w}" for f, w in SUITE_CONFIGS]

    def one_scene(s: int):
        synth_cfg = cfg.synth_config(s)
        bundle = _prepare(synth_cfg, cfg.voxel_size)
        mious = np.zeros((len(SUITE_CONFIGS), cfg.num_seeds))
        pairs = zero_w = zero_g = 0
        for seed in range(cfg.num_seeds):
            feats = gen_view_features(
                bundle.scene, bundle.bank, synth_cfg,
                feature_seed=cfg.feature_seed_base + seed * cfg.num_scenes + s,
                dense=True,
            )
            for ci, (fusion, weighting) in enumerate(SUITE_CONFIGS):
                fc, res = _fuse_config(bundle, feats, fusion, weighting)
                mious[ci, seed] = _referring_miou(fc, bundle, gcfg)
                if fusion == "object" and weighting == "lambda-g":
                    for (v, n) in feats.corrupted:
                        pairs += 1
                        zero_w += res.weights.omega[v, n - 1] == 0.0
                        zero_g += res.weights.g[v, n - 1] == 0.0
        return mious, pairs, zero_w, zero_g

    results = parallel_map(one_scene, list(range(cfg.num_scenes)), cfg.threads)
    per_seed = np.mean([r[0] for r in results], axis=0)  # (configs, seeds)
    return CorruptionSuiteResult(
        miou_per_seed={lab: per_seed[i] for i, lab in enumerate(labels)},
        corrupted_pairs=sum(r[1] for r in results),
        corrupted_zero_weight=sum(r[2] for r in results),
        corrupted_zero_g=sum(r[3] for r in results),
    )


@dataclass(frozen=True)
class ViewSweepConfig:
    num_seeds: int = 20
    num_objects: int = 6
    num_views: int = 16
    embed_dim: int = 32
    sigma_feat: float = 0.3
    voxel_size: float = 0.02
    s_thr: float = 0.95
    gamma: float = 0.1
    scene_seed_base: int = 2000
    fusion: str = "object"
    weighting: str = "lambda-g"
    threads: int = field(default_factory=default_threads)


def run_view_sweep(cfg: ViewSweepConfig) -> dict[int, np.ndarray]:
    """Per view count: (num_seeds,) Pr@25 across per-seed scenes."""
    from .pipeline import FusePipelineConfig, fuse_scene, referring_records
    from .metrics import pr_at

    gcfg = GroundingConfig(gamma=cfg.gamma, s_thr=cfg.s_thr, rule="threshold")
    counts = view_count_schedule(cfg.num_views)

    def one_seed(seed: int):
        synth_cfg = SynthConfig(
            seed=cfg.scene_seed_base + seed, num_objects=cfg.num_objects,
            num_views=cfg.num_views, embed_dim=cfg.embed_dim, sigma_feat=cfg.sigma_feat,
        )
        scene, _ = gen_scene(synth_cfg)
        bank = make_concept_bank(synth_cfg)
        feats = gen_view_features(scene, bank, synth_cfg, dense=cfg.fusion == "point")
        out = {}
        for count in counts:
            pcfg = FusePipelineConfig(fusion=cfg.fusion, weighting=cfg.weighting,
                                      voxel_size=cfg.voxel_size,
                                      view_subset=tuple(range(count)))
            fused = fuse_scene(scene, bank.prompt_bank, feats.dense, feats.objects, pcfg)
            recs = referring_records(fused.feature_cloud, fused.mask, bank.prompt_bank,
                                     scene, gcfg)
            out[count] = pr_at(recs, 25)
        return out

    rows = parallel_map(one_seed, list(range(cfg.num_seeds)), cfg.threads)
    return {c: np.array([r[c] for r in rows]) for c in counts}
