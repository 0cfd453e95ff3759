"""Command surface: synth | fuse | ground | cluster | eval | export-ply.

Every command is a pure function of its input files, flags, and seed, so
reruns produce byte-identical artifacts (run_manifest.json carries wall
clock and is provenance only). Defaults can be overridden from the
environment with the MVFUSION_ prefix, e.g. MVFUSION_THREADS=4.

Exit codes: 0 success, 2 I/O error, 3 validation error, 4 numerical error,
1 unexpected failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .fusion import DenseFeatureMap, FeatureCloud, ObjectFeatureSet
from .grounding import (GroundingConfig, RansacConfig, default_s_thr, instance_segment,
                        refer_segment, remove_table, save_heatmap_ply)
from .metrics import aggregate, write_report_csv, write_report_json
from .pipeline import (FusePipelineConfig, fuse_scene, instance_metrics, referring_records,
                       semantic_records, transfer_labels, view_count_schedule)
from .prompts import PromptBank, QueryContext
from .scene import Mask3D, PointCloud, Scene, aggregate_cloud, voxel_downsample
from .sceneio import (load_scene, read_manifest, save_labels, save_ply, save_points_binary,
                      save_scene)
from .synth import SynthConfig, gen_scene, gen_view_features, make_concept_bank, save_truth
from .util import default_threads

EXIT_OK, EXIT_UNEXPECTED, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3, 4
ENV_PREFIX = "MVFUSION_"


def _env(name: str, default, cast=None):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return default
    return (cast or type(default))(raw) if default is not None else (cast or str)(raw)


def _write_run_manifest(out_dir: str, command: str, args: argparse.Namespace,
                        inputs: list[str], outputs: list[str], started: float) -> None:
    payload = {
        "command": command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "inputs": sorted(inputs),
        "outputs": sorted(outputs),
        "seed": getattr(args, "seed", None),
        "artifact_version": __version__,
        "wall_clock_s": round(time.time() - started, 3),
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    started = time.time()
    cfg = SynthConfig(
        seed=args.seed, num_objects=args.objects, num_views=args.views,
        image_width=args.image_width, image_height=args.image_height,
        table_extent=args.table_extent, embed_dim=args.embed_dim,
        sigma_text=args.sigma_text, sigma_feat=args.sigma_feat,
        corruption=args.corruption, catalog_size=args.catalog,
    )
    scene, truth = gen_scene(cfg, threads=args.threads)
    bank = make_concept_bank(cfg)
    feats = gen_view_features(scene, bank, cfg, dense=not args.no_dense)
    os.makedirs(args.out, exist_ok=True)
    outputs = []

    if feats.dense is not None:
        views = []
        for v in scene.views:
            name = f"dense_{v.id:03d}.bin"
            feats.dense[v.id].save(os.path.join(args.out, name))
            outputs.append(name)
            views.append(dataclasses.replace(v, dense_features_path=name))
        scene = Scene(views=tuple(views), num_objects=scene.num_objects,
                      object_instance_ids=scene.object_instance_ids)

    extra = {"bank": "bank.bin", "object_features": "objfeat.bin", "ground_truth": "gt.json"}
    save_scene(scene, args.out, extra=extra)
    feats.objects.save(os.path.join(args.out, "objfeat.bin"))
    bank.prompt_bank.save(os.path.join(args.out, "bank.bin"))
    truth = dataclasses.replace(truth, corrupted=feats.corrupted)
    save_truth(os.path.join(args.out, "gt.json"), truth, cfg)
    outputs += ["manifest.json", "objfeat.bin", "bank.bin", "gt.json"]
    _write_run_manifest(args.out, "synth", args, [], outputs, started)
    print(f"synth: wrote scene with {scene.num_views} views, {scene.num_objects} objects to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ fuse

def _load_payloads(scene_dir: str, scene: Scene, need_dense: bool, need_objects: bool):
    manifest = read_manifest(scene_dir)
    dense = None
    objects = None
    if need_dense:
        dense = []
        for v, meta in zip(scene.views, manifest["views"]):
            rel = meta.get("dense_features")
            if rel is None:
                raise ValidationError(f"view {v.id} has no dense feature payload")
            dense.append(DenseFeatureMap.load(os.path.join(scene_dir, rel),
                                              image_height=v.intrinsics.height,
                                              image_width=v.intrinsics.width))
    if need_objects:
        rel = manifest.get("object_features")
        if rel is None:
            raise ValidationError("scene manifest has no object-level feature payload")
        objects = ObjectFeatureSet.load(os.path.join(scene_dir, rel))
    return manifest, dense, objects


def _load_bank(scene_dir: str, manifest: dict, override: str | None = None) -> PromptBank:
    path = override or os.path.join(scene_dir, manifest.get("bank", "bank.bin"))
    return PromptBank.load(path)


def cmd_fuse(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    cfg = FusePipelineConfig(
        fusion=args.fusion, weighting=args.weighting, strategy=args.strategy,
        reduction=args.reduction, voxel_size=args.voxel_size, c_thr=args.c_thr,
        threads=args.threads,
    )
    manifest, dense, objects = _load_payloads(args.scene, scene,
                                              need_dense=cfg.fusion == "point",
                                              need_objects=cfg.fusion == "object")
    bank = _load_bank(args.scene, manifest, args.bank)
    out = fuse_scene(scene, bank, dense, objects, cfg)
    os.makedirs(args.out, exist_ok=True)
    out.feature_cloud.save(os.path.join(args.out, "fused.bin"))
    out.visibility.save(os.path.join(args.out, "visibility.u8"))
    save_labels(os.path.join(args.out, "gt_labels.u16"), out.mask.labels)
    _write_run_manifest(args.out, "fuse", args, [args.scene],
                        ["fused.bin", "visibility.u8", "gt_labels.u16"], started)
    m, c = out.feature_cloud.features.shape
    print(f"fuse: {args.fusion}/{args.weighting} -> {m} points x {c} dims in {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- ground

def _context_from_args(bank: PromptBank, args) -> QueryContext:
    if args.embedding:
        vec = np.fromfile(args.embedding, dtype="<f4").astype(np.float64)
        if vec.size != bank.dim:
            raise ValidationError(f"embedding file has {vec.size} floats, bank dim is {bank.dim}")
        positive = vec
        k_pos = None
    else:
        if args.query_id is None:
            raise ValidationError("ground needs --query-id or --embedding")
        k_pos = args.query_id
        positive = bank.mean_prompt(k_pos)
    strategy = args.negatives
    if strategy == "scene":
        if not args.scene:
            raise ValidationError("--negatives scene requires --scene for the instance list")
        ids = [int(k) for k in read_manifest(args.scene)["object_instance_ids"]]
        ks = sorted({k for k in ids if k != k_pos})
        negatives = np.stack([bank.mean_prompt(k) for k in ks]) if ks else np.empty((0, bank.dim))
    elif strategy == "all":
        ks = [k for k in bank.instance_ids if k != k_pos]
        negatives = np.stack([bank.mean_prompt(k) for k in ks]) if ks else np.empty((0, bank.dim))
    elif strategy == "canonical":
        if bank.canonical is None:
            raise ValidationError("bank has no canonical embeddings")
        negatives = bank.canonical
    else:
        negatives = np.empty((0, bank.dim))
    return QueryContext(positive=positive, negatives=negatives, strategy=strategy,
                        reduction=args.reduction)


def cmd_ground(args) -> int:
    started = time.time()
    fc = FeatureCloud.load(args.cloud, provenance=args.provenance)
    bank = PromptBank.load(args.bank)
    ctx = _context_from_args(bank, args)
    s_thr = args.s_thr if args.s_thr is not None else default_s_thr(args.provenance)
    gcfg = GroundingConfig(gamma=args.gamma, s_thr=s_thr, rule=args.rule)
    seg = refer_segment(fc, ctx, gcfg)
    if args.heatmap_scores == "cosine":
        from .grounding import raw_positive_cosine

        scores = raw_positive_cosine(fc, ctx)
    else:
        scores = seg.scores  # rho+, or raw cosine when there are no negatives
    os.makedirs(args.out, exist_ok=True)
    save_labels(os.path.join(args.out, "labels.u16"), seg.labels)
    save_heatmap_ply(os.path.join(args.out, "heatmap.ply"), fc, scores)
    _write_run_manifest(args.out, "ground", args, [args.cloud, args.bank],
                        ["labels.u16", "heatmap.ply"], started)
    print(f"ground: {int((seg.labels == 1).sum())} of {len(seg.labels)} points matched")
    return EXIT_OK


# --------------------------------------------------------------- cluster

def cmd_cluster(args) -> int:
    started = time.time()
    fc = FeatureCloud.load(args.cloud)
    gcfg = GroundingConfig(cluster_eps=args.eps, cluster_min_samples=args.min_samples)
    seg = instance_segment(fc, gcfg)
    os.makedirs(args.out, exist_ok=True)
    save_labels(os.path.join(args.out, "instances.u16"), seg.labels)
    _write_run_manifest(args.out, "cluster", args, [args.cloud], ["instances.u16"], started)
    n = len(set(seg.labels[seg.labels > 0]))
    print(f"cluster: {n} clusters, {int((seg.labels == 0).sum())} noise points")
    return EXIT_OK


# ------------------------------------------------------------------ eval

def _gt_for_cloud(scene: Scene, cloud: PointCloud, voxel_size: float, threads: int) -> Mask3D:
    full, mask = aggregate_cloud(scene, threads=threads)
    full, mask = voxel_downsample(full, mask, voxel_size)
    return transfer_labels(full, mask, cloud)


def cmd_eval(args) -> int:
    started = time.time()
    scene = load_scene(args.scene)
    manifest = read_manifest(args.scene)
    bank = _load_bank(args.scene, manifest, args.bank)
    os.makedirs(args.out, exist_ok=True)
    gcfg = GroundingConfig(gamma=args.gamma,
                           s_thr=args.s_thr if args.s_thr is not None else default_s_thr(args.provenance),
                           rule=args.rule, cluster_eps=args.eps,
                           cluster_min_samples=args.min_samples)

    if args.sweep_views:
        _, dense, objects = _load_payloads(args.scene, scene,
                                           need_dense=args.fusion == "point",
                                           need_objects=args.fusion == "object")
        rows = []
        for count in view_count_schedule(scene.num_views):
            cfg = FusePipelineConfig(fusion=args.fusion, weighting=args.weighting,
                                     strategy=args.negatives, reduction=args.reduction,
                                     voxel_size=args.voxel_size, c_thr=args.c_thr,
                                     threads=args.threads, view_subset=tuple(range(count)))
            out = fuse_scene(scene, bank, dense, objects, cfg)
            recs = referring_records(out.feature_cloud, out.mask, bank, scene, gcfg,
                                     strategy=args.negatives, reduction=args.reduction)
            agg = aggregate(recs)
            rows.append({"views": count, "fusion": args.fusion, "weighting": args.weighting,
                         "miou": round(agg["miou"], 6), "pr@25": round(agg["pr@25"], 6),
                         "pr@50": round(agg["pr@50"], 6), "pr@75": round(agg["pr@75"], 6)})
        write_report_csv(os.path.join(args.out, "report.csv"), rows)
        write_report_json(os.path.join(args.out, "report.json"), [], {"rows": rows},
                          extra={"mode": "views-ablation"})
        _write_run_manifest(args.out, "eval", args, [args.scene], ["report.csv", "report.json"], started)
        print(f"eval: views ablation over {len(rows)} view counts -> {args.out}")
        return EXIT_OK

    if not args.cloud:
        raise ValidationError("eval needs --cloud (or --sweep-views)")
    fc = FeatureCloud.load(args.cloud, provenance=args.provenance)
    if args.task == "distill":
        if not args.target:
            raise ValidationError("distill task needs --target (the fused target cloud)")
        from .fusion import distill_loss

        target = FeatureCloud.load(args.target)
        recs = []
        agg = {"distill_loss": distill_loss(fc, target)}
        gt = None
    else:
        gt = _gt_for_cloud(scene, fc.cloud, args.voxel_size, args.threads)
    if args.task == "referring":
        recs = referring_records(fc, gt, bank, scene, gcfg,
                                 strategy=args.negatives, reduction=args.reduction)
        agg = aggregate(recs)
    elif args.task == "semantic":
        recs = semantic_records(fc, gt, bank, scene)
        agg = aggregate(recs, with_macc=True)
    elif args.task == "instance":
        recs = []
        agg = instance_metrics(fc, gt, gcfg)
    write_report_json(os.path.join(args.out, "report.json"), recs, agg, extra={"task": args.task})
    row = {"task": args.task, **{k: (round(v, 6) if isinstance(v, float) else v) for k, v in agg.items()}}
    write_report_csv(os.path.join(args.out, "report.csv"), [row])
    _write_run_manifest(args.out, "eval", args, [args.scene, args.cloud],
                        ["report.csv", "report.json"], started)
    print(f"eval[{args.task}]: " + ", ".join(f"{k}={v}" for k, v in agg.items()))
    return EXIT_OK


# ------------------------------------------------------------- export-ply

def cmd_export_ply(args) -> int:
    started = time.time()
    fc = FeatureCloud.load(args.cloud)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    cloud = fc.cloud
    if args.remove_table:
        cloud, _ = remove_table(cloud, RansacConfig())
    if args.scores:
        scores = np.fromfile(args.scores, dtype="<f4").astype(np.float64)
        if scores.size != len(fc.cloud):
            raise ValidationError("scores length does not match the cloud")
        save_heatmap_ply(args.out, fc, scores)
    elif args.format == "bin":
        save_points_binary(args.out, cloud)
    else:
        save_ply(args.out, cloud)
    _write_run_manifest(out_dir, "export-ply", args, [args.cloud], [os.path.basename(args.out)], started)
    print(f"export-ply: wrote {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvfusion", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_threads(sp):
        sp.add_argument("--threads", type=int, default=_env("threads", default_threads()))

    sp = sub.add_parser("synth", help="generate a synthetic scene directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=_env("seed", 0))
    sp.add_argument("--objects", type=int, default=_env("objects", 4))
    sp.add_argument("--views", type=int, default=_env("views", 16))
    sp.add_argument("--corruption", type=float, default=_env("corruption", 0.0))
    sp.add_argument("--sigma-feat", type=float, default=_env("sigma_feat", 0.0))
    sp.add_argument("--sigma-text", type=float, default=_env("sigma_text", 0.05))
    sp.add_argument("--image-width", type=int, default=_env("image_width", 64))
    sp.add_argument("--image-height", type=int, default=_env("image_height", 48))
    sp.add_argument("--table-extent", type=float, default=_env("table_extent", 0.5))
    sp.add_argument("--embed-dim", type=int, default=_env("embed_dim", 32))
    sp.add_argument("--catalog", type=int, default=None)
    sp.add_argument("--no-dense", action="store_true", help="skip dense per-view payloads")
    add_threads(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("fuse", help="fuse view features into a feature cloud")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--fusion", choices=["point", "object"], default=_env("fusion", "object"))
    sp.add_argument("--weighting", choices=["uniform", "lambda", "g", "lambda-g"],
                    default=_env("weighting", "lambda-g"))
    sp.add_argument("--strategy", choices=["scene", "all", "canonical", "none"],
                    default=_env("strategy", "scene"))
    sp.add_argument("--reduction", choices=["max", "mean"], default=_env("reduction", "max"))
    sp.add_argument("--voxel-size", type=float, default=_env("voxel_size", 0.02))
    sp.add_argument("--c-thr", type=float, default=_env("c_thr", 0.02))
    sp.add_argument("--bank", default=None, help="override the manifest's prompt bank")
    add_threads(sp)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("ground", help="referring segmentation over a feature cloud")
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--bank", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--query-id", type=int, default=None, help="catalog instance id")
    sp.add_argument("--embedding", default=None, help="raw float32 query embedding file")
    sp.add_argument("--negatives", choices=["scene", "all", "canonical", "none"],
                    default=_env("negatives", "all"))
    sp.add_argument("--scene", default=None, help="scene dir (for --negatives scene)")
    sp.add_argument("--rule", choices=["threshold", "pos-vs-neg"], default=_env("rule", "threshold"))
    sp.add_argument("--s-thr", type=float, default=None)
    sp.add_argument("--gamma", type=float, default=_env("gamma", 0.1))
    sp.add_argument("--reduction", choices=["max", "mean"], default=_env("reduction", "max"))
    sp.add_argument("--provenance", choices=["fused-target", "external-prediction"],
                    default="fused-target")
    sp.add_argument("--heatmap-scores", choices=["softmax", "cosine"], default="softmax")
    sp.set_defaults(func=cmd_ground)

    sp = sub.add_parser("cluster", help="feature-space instance segmentation")
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--eps", type=float, default=_env("eps", 0.01))
    sp.add_argument("--min-samples", type=int, default=_env("min_samples", 2))
    sp.set_defaults(func=cmd_cluster)

    sp = sub.add_parser("eval", help="evaluate a feature cloud against scene ground truth")
    sp.add_argument("--task", choices=["referring", "semantic", "instance", "distill"],
                    default="referring")
    sp.add_argument("--target", default=None, help="fused target cloud (distill task)")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--cloud", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--bank", default=None)
    sp.add_argument("--provenance", choices=["fused-target", "external-prediction"],
                    default="fused-target")
    sp.add_argument("--rule", choices=["threshold", "pos-vs-neg"], default=_env("rule", "threshold"))
    sp.add_argument("--s-thr", type=float, default=None)
    sp.add_argument("--gamma", type=float, default=_env("gamma", 0.1))
    sp.add_argument("--negatives", choices=["scene", "all", "canonical", "none"],
                    default=_env("negatives", "scene"))
    sp.add_argument("--reduction", choices=["max", "mean"], default=_env("reduction", "max"))
    sp.add_argument("--eps", type=float, default=_env("eps", 0.01))
    sp.add_argument("--min-samples", type=int, default=_env("min_samples", 2))
    sp.add_argument("--voxel-size", type=float, default=_env("voxel_size", 0.02))
    sp.add_argument("--c-thr", type=float, default=_env("c_thr", 0.02))
    sp.add_argument("--sweep-views", action="store_true",
                    help="re-fuse with incremental view subsets and report per count")
    sp.add_argument("--fusion", choices=["point", "object"], default=_env("fusion", "object"))
    sp.add_argument("--weighting", choices=["uniform", "lambda", "g", "lambda-g"],
                    default=_env("weighting", "lambda-g"))
    add_threads(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export-ply", help="export a feature cloud to PLY or raw points")
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=["ply", "bin"], default="ply",
                    help="ASCII PLY or raw float32 M x 3")
    sp.add_argument("--scores", default=None, help="raw float32 per-point scores -> heatmap")
    sp.add_argument("--remove-table", action="store_true")
    sp.set_defaults(func=cmd_export_ply)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error (validation): {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"error (numerical): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error (i/o): {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error (unexpected): {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
