"""Procedural desk-scale test scenes with exact analytic ground truth.

Scenes are tabletop arrangements of spheres and axis-aligned boxes resting
on a finite horizontal plane, rendered into depth and instance masks by
analytic ray-primitive intersection (no meshes, no rasterization error).
Cameras sit on a Fibonacci lattice over the upper hemisphere, all looking
at the table center.

Concept embeddings stand in for CLIP space: each catalog instance gets a
unit prototype (pairwise cosine below a separation bound), prompt sets are
noisy copies of the prototype, and per-(view, object) features are noisy
prototypes. A corrupted view feature is drawn near a *different* in-scene
prototype and rejection-sampled until the informativeness metric provably
clips it to zero against the scene's negative prompts, which is what makes
weight-soundness assertions exact.

`oracle_fuse_*` are deliberately naive re-implementations of the fusion
averages (plain Python loops, local cosine); they share no code with the
fusion engine and exist only as comparison targets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .fusion import DenseFeatureMap, ObjectFeatureSet
from .projection import ObjectVisibility, VisibilityMap
from .prompts import CANONICAL_PHRASES, PromptBank, QueryContext
from .scene import CameraIntrinsics, Pose, Scene, View
from .util import subrng

PROTO_MAX_COS = 0.5  # rejection bound for prototype separation
CORRUPT_MARGIN = 1e-4  # safety margin so clipping survives float32 round-trips
_STREAM_PLACE, _STREAM_PROTO, _STREAM_PROMPT, _STREAM_FEAT = 0, 1, 2, 3


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_objects: int = 4
    num_views: int = 16
    image_width: int = 64
    image_height: int = 48
    focal: float = 56.0
    camera_radius: float = 1.2  # meters, hemisphere radius
    table_extent: float = 0.5  # meters, half-extent of the square table
    embed_dim: int = 32
    num_prompts: int = 3
    sigma_text: float = 0.05
    sigma_feat: float = 0.0
    corruption: float = 0.0  # probability a (view, object) feature is corrupted
    catalog_size: int | None = None  # defaults to 2 * num_objects
    patch: int = 1  # dense grid cell size in pixels
    # Height of the table surface. Off-grid on purpose: a surface sitting
    # exactly on a voxel boundary (z = 0) straddles two layers through float
    # rounding, which is a measure-zero pathology rather than a realistic
    # tabletop.
    table_height: float = 0.01
    # Fibonacci lattice floor (unit-sphere z). Near-zero elevations put the
    # optical axis almost in the table plane; one foreshortened pixel then
    # spans most of the table, which no physical rig does.
    min_elevation: float = 0.15

    def __post_init__(self):
        if not 1 <= self.num_objects <= 12:
            raise ValidationError("num_objects must be in [1, 12]")
        if not 1 <= self.num_views <= 73:
            raise ValidationError("num_views must be in [1, 73]")
        if not 0.0 <= self.corruption <= 1.0:
            raise ValidationError("corruption probability must be in [0, 1]")
        for name in ("image_width", "image_height", "focal", "camera_radius",
                     "table_extent", "embed_dim", "num_prompts", "patch"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.sigma_text < 0 or self.sigma_feat < 0:
            raise ValidationError("noise sigmas must be >= 0")
        if not 0.0 <= self.min_elevation < 1.0:
            raise ValidationError("min_elevation must be in [0, 1)")
        if self.image_width % self.patch or self.image_height % self.patch:
            raise ValidationError("patch must divide the image dimensions")

    @property
    def num_catalog(self) -> int:
        return self.catalog_size if self.catalog_size is not None else 2 * self.num_objects


# --------------------------------------------------------------------------
# primitives

@dataclass(frozen=True)
class Sphere:
    center: np.ndarray  # (3,)
    radius: float

    kind = "sphere"

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Smallest positive ray parameter per direction; inf where missed."""
        oc = origin - self.center
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * dirs @ oc
        c = float(oc @ oc - self.radius ** 2)
        disc = b * b - 4.0 * a * c
        hit = disc >= 0
        s = np.full(dirs.shape[:-1], np.inf)
        if hit.any():
            sq = np.sqrt(disc[hit])
            s0 = (-b[hit] - sq) / (2.0 * a[hit])
            s1 = (-b[hit] + sq) / (2.0 * a[hit])
            near = np.where(s0 > 1e-9, s0, np.where(s1 > 1e-9, s1, np.inf))
            s[hit] = near
        return s

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        return np.abs(np.linalg.norm(points - self.center, axis=-1) - self.radius)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.full(3, self.radius)
        return self.center - r, self.center + r

    def to_json(self) -> dict:
        return {"kind": "sphere", "center": [float(x) for x in self.center],
                "radius": float(self.radius)}


@dataclass(frozen=True)
class Box:
    center: np.ndarray  # (3,)
    half: np.ndarray  # (3,) half-sizes

    kind = "box"

    def ray_hits(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        lo, hi = self.aabb()
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
        tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
        ok = (tmax >= tmin) & (tmax > 1e-9)
        s = np.where(ok & (tmin > 1e-9), tmin, np.inf)
        return s

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        q = np.abs(points - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return np.abs(outside + inside)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.half, self.center + self.half

    def to_json(self) -> dict:
        return {"kind": "box", "center": [float(x) for x in self.center],
                "half": [float(x) for x in self.half]}


def primitive_from_json(obj: dict):
    if obj["kind"] == "sphere":
        return Sphere(np.array(obj["center"], dtype=np.float64), float(obj["radius"]))
    if obj["kind"] == "box":
        return Box(np.array(obj["center"], dtype=np.float64), np.array(obj["half"], dtype=np.float64))
    raise ValidationError(f"unknown primitive kind {obj['kind']!r}")


@dataclass(frozen=True)
class SceneTruth:
    """Analytic ground truth emitted next to a generated scene."""

    primitives: tuple  # local id n -> primitives[n-1]
    instance_ids: tuple[int, ...]
    camera_centers: np.ndarray  # (V, 3)
    table_extent: float
    camera_radius: float
    table_height: float = 0.0
    corrupted: tuple[tuple[int, int], ...] = ()  # (view id, local object id)

    def surface_distance(self, points: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Distance of each point to the surface of its labeled shape (0 = table)."""
        pts = np.asarray(points, dtype=np.float64)
        lab = np.asarray(labels)
        out = np.full(pts.shape[0], np.nan)
        table = lab == 0
        out[table] = np.abs(pts[table, 2] - self.table_height)
        for n, prim in enumerate(self.primitives, start=1):
            sel = lab == n
            if sel.any():
                out[sel] = prim.surface_distance(pts[sel])
        return out


# --------------------------------------------------------------------------
# concept bank

@dataclass(frozen=True)
class ConceptBank:
    """Prototype concept vectors plus derived prompt sets and helpers."""

    dim: int
    prototypes: dict[int, np.ndarray]  # catalog id -> unit vector
    prompt_sets: dict[int, np.ndarray]
    distractor: np.ndarray  # painted on dense background pixels
    canonical: np.ndarray  # (4, C)
    prompt_bank: PromptBank = field(init=False)

    def __post_init__(self):
        texts = {
            k: tuple(f"synthetic concept {k} prompt {j}" for j in range(self.prompt_sets[k].shape[0]))
            for k in self.prompt_sets
        }
        bank = PromptBank(dim=self.dim, prompt_sets=dict(self.prompt_sets),
                          texts=texts, canonical=self.canonical)
        object.__setattr__(self, "prompt_bank", bank)


def _separated_unit_vectors(rng: np.random.Generator, count: int, dim: int,
                            max_cos: float, against: list[np.ndarray] | None = None,
                            max_tries: int = 100_000) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    anchors = list(against or [])
    for _ in range(max_tries):
        if len(out) == count:
            return out
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(abs(float(v @ a)) < max_cos for a in anchors):
            anchors.append(v)
            out.append(v)
    raise ValidationError(f"could not sample {count} separated vectors in dim {dim}")


def make_concept_bank(cfg: SynthConfig) -> ConceptBank:
    rng = subrng(cfg.seed, _STREAM_PROTO)
    k = cfg.num_catalog
    protos = _separated_unit_vectors(rng, k, cfg.embed_dim, PROTO_MAX_COS)
    extras = _separated_unit_vectors(rng, 1 + len(CANONICAL_PHRASES), cfg.embed_dim,
                                     PROTO_MAX_COS, against=protos)
    distractor, canonical = extras[0], np.stack(extras[1:])
    prng = subrng(cfg.seed, _STREAM_PROMPT)
    sets = {}
    for kid in range(1, k + 1):
        base = protos[kid - 1]
        prompts = base[None, :] + cfg.sigma_text * prng.standard_normal((cfg.num_prompts, cfg.embed_dim))
        norms = np.linalg.norm(prompts, axis=1, keepdims=True)
        sets[kid] = prompts / norms
    return ConceptBank(dim=cfg.embed_dim,
                       prototypes={i + 1: protos[i] for i in range(k)},
                       prompt_sets=sets, distractor=distractor, canonical=canonical)


# --------------------------------------------------------------------------
# scene generation

def _hemisphere_rig(cfg: SynthConfig) -> np.ndarray:
    """Fibonacci lattice on the upper hemisphere, radius camera_radius."""
    v = cfg.num_views
    i = np.arange(v)
    z = cfg.min_elevation + (1.0 - cfg.min_elevation) * (i + 0.5) / v
    r_xy = np.sqrt(1.0 - z * z)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = i * golden
    pts = np.stack([r_xy * np.cos(phi), r_xy * np.sin(phi), z], axis=1)
    return pts * cfg.camera_radius


def look_at_pose(center: np.ndarray, target: np.ndarray) -> Pose:
    """World->camera pose with +z pointing from center toward target."""
    fwd = np.asarray(target, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(up, fwd)
    if np.linalg.norm(x) < 1e-9:
        x = np.array([1.0, 0.0, 0.0])
    else:
        x = x / np.linalg.norm(x)
    y = np.cross(fwd, x)
    r = np.stack([x, y, fwd], axis=0)  # rows: camera axes in world frame
    t = -r @ np.asarray(center, dtype=np.float64)
    mat = np.eye(4)
    mat[:3, :3] = r
    mat[:3, 3] = t
    return Pose(mat)


def _place_primitives(cfg: SynthConfig, rng: np.random.Generator) -> list:
    prims: list = []
    boxes: list[tuple[np.ndarray, np.ndarray]] = []
    attempts = 0
    while len(prims) < cfg.num_objects:
        attempts += 1
        if attempts > 1000:
            raise ValidationError("scene too crowded: placement failed after 1000 rejections")
        if rng.random() < 0.5:
            radius = rng.uniform(0.05, 0.10)
            margin = cfg.table_extent - radius
            xy = rng.uniform(-margin, margin, size=2)
            prim = Sphere(np.array([xy[0], xy[1], cfg.table_height + radius]), radius)
        else:
            half = rng.uniform(0.04, 0.09, size=3)
            margin_xy = cfg.table_extent - half[:2]
            xy = rng.uniform(-margin_xy, margin_xy)
            prim = Box(np.array([xy[0], xy[1], cfg.table_height + half[2]]), half)
        lo, hi = prim.aabb()
        pad = 0.01  # keep shapes strictly apart so masks never touch-merge
        if any(np.all(lo - pad < bhi) and np.all(hi + pad > blo) for blo, bhi in boxes):
            continue
        prims.append(prim)
        boxes.append((lo, hi))
    return prims


def _render_view(cfg: SynthConfig, pose: Pose, prims: list) -> tuple[np.ndarray, np.ndarray]:
    """Analytic depth (camera z) and instance mask for one camera."""
    w, h = cfg.image_width, cfg.image_height
    fx = fy = cfg.focal
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack([(uu - cx) / fx, (vv - cy) / fy, np.ones_like(uu, dtype=np.float64)], axis=-1)
    r = pose.rotation
    origin = -r.T @ pose.translation
    dirs = dirs_cam @ r  # camera z-component of p(s) = s, so depth == s

    hits = [np.full((h, w), np.inf)]
    # table: finite square at z = table_height
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s_table = np.where(np.abs(dz) > 1e-12, (cfg.table_height - origin[2]) / dz, np.inf)
    px = origin[0] + s_table * dirs[..., 0]
    py = origin[1] + s_table * dirs[..., 1]
    on_table = (s_table > 1e-9) & (np.abs(px) <= cfg.table_extent) & (np.abs(py) <= cfg.table_extent)
    hits[0] = np.where(on_table, s_table, np.inf)
    for prim in prims:
        hits.append(prim.ray_hits(origin, dirs))
    stack = np.stack(hits, axis=0)  # (1 + N, H, W); index 0 = table
    nearest = stack.argmin(axis=0)
    smin = stack.min(axis=0)
    depth = np.where(np.isfinite(smin), smin, 0.0).astype(np.float32)
    mask = np.where(np.isfinite(smin), nearest, 0).astype(np.uint16)
    return depth, mask


def gen_scene(cfg: SynthConfig, threads: int = 1) -> tuple[Scene, SceneTruth]:
    """Deterministic scene: primitives on the plane, hemisphere camera rig.

    Rendering is RNG-free per view, so worker count never changes output.
    """
    from .util import parallel_map

    rng = subrng(cfg.seed, _STREAM_PLACE)
    prims = _place_primitives(cfg, rng)
    k = cfg.num_catalog
    ids = rng.choice(np.arange(1, k + 1), size=cfg.num_objects, replace=False)
    centers = _hemisphere_rig(cfg)
    intr = CameraIntrinsics(fx=cfg.focal, fy=cfg.focal,
                            cx=(cfg.image_width - 1) / 2.0, cy=(cfg.image_height - 1) / 2.0,
                            width=cfg.image_width, height=cfg.image_height)
    target = np.zeros(3)
    poses = [look_at_pose(centers[vid], target) for vid in range(cfg.num_views)]
    rendered = parallel_map(lambda p: _render_view(cfg, p, prims), poses, threads)
    views = []
    for vid, (pose, (depth, mask)) in enumerate(zip(poses, rendered)):
        views.append(View(id=vid, intrinsics=intr, pose=pose, depth=depth, mask2d=mask))
    scene = Scene(views=tuple(views), num_objects=cfg.num_objects,
                  object_instance_ids=tuple(int(i) for i in ids))
    truth = SceneTruth(primitives=tuple(prims), instance_ids=tuple(int(i) for i in ids),
                       camera_centers=centers, table_extent=cfg.table_extent,
                       camera_radius=cfg.camera_radius, table_height=cfg.table_height)
    return scene, truth


# --------------------------------------------------------------------------
# synthetic view features

@dataclass(frozen=True)
class SynthFeatures:
    objects: ObjectFeatureSet
    dense: list[DenseFeatureMap] | None
    corrupted: tuple[tuple[int, int], ...]  # (view id, local object id)


def _scene_negative_means(bank: ConceptBank, scene: Scene, n: int) -> tuple[np.ndarray, np.ndarray]:
    means = bank.prompt_bank.means
    k_pos = scene.catalog_id(n)
    negs = [means[scene.catalog_id(j)] for j in range(1, scene.num_objects + 1)
            if scene.catalog_id(j) != k_pos]
    return means[k_pos], np.stack(negs) if negs else np.empty((0, bank.dim))


def _draw_corrupt(rng: np.random.Generator, bank: ConceptBank, scene: Scene,
                  n: int, cfg: SynthConfig) -> np.ndarray:
    """Feature near a foreign prototype, certified to clip to zero weight.

    Rejection-samples until cos(z, q_pos) <= max_neg cos(z, q_neg) by a
    safety margin; the foreign mean prompt itself terminates the loop.
    """
    others = [j for j in range(1, scene.num_objects + 1)
              if scene.catalog_id(j) != scene.catalog_id(n)]
    if not others:
        raise ValidationError("corruption needs a second distinct in-scene instance")
    q_pos, q_negs = _scene_negative_means(bank, scene, n)
    m = others[int(rng.integers(len(others)))]
    proto_m = bank.prototypes[scene.catalog_id(m)]
    for _ in range(64):
        z = proto_m + cfg.sigma_feat * rng.standard_normal(cfg.embed_dim)
        z /= np.linalg.norm(z)
        if float(z @ q_pos) <= float(np.max(q_negs @ z)) - CORRUPT_MARGIN:
            return z
    return bank.prompt_bank.means[scene.catalog_id(m)].copy()


def gen_view_features(scene: Scene, bank: ConceptBank, cfg: SynthConfig,
                      feature_seed: int | None = None, dense: bool = True) -> SynthFeatures:
    """Per-(view, object) features: noisy prototypes, corrupted with prob p.

    Dense maps paint every mask pixel with its object's (possibly corrupted)
    view feature and background pixels with the bank's distractor vector, so
    point- and object-wise fusion consume consistent evidence.
    """
    for n in range(1, scene.num_objects + 1):
        if scene.catalog_id(n) not in bank.prototypes:
            raise ValidationError(f"bank does not cover catalog instance {scene.catalog_id(n)}")
    seed = cfg.seed if feature_seed is None else feature_seed
    v, n_obj, c = scene.num_views, scene.num_objects, cfg.embed_dim
    feats = np.zeros((v, n_obj, c))
    valid = np.zeros((v, n_obj), dtype=bool)
    corrupted: list[tuple[int, int]] = []
    can_corrupt = len({scene.catalog_id(j) for j in range(1, n_obj + 1)}) > 1
    for view in scene.views:
        rng = subrng(seed, _STREAM_FEAT, view.id)
        present = np.bincount(view.mask2d.reshape(-1).astype(np.int64), minlength=n_obj + 1)
        for n in range(1, n_obj + 1):
            if present[n] == 0:
                continue
            valid[view.id, n - 1] = True
            if cfg.corruption > 0 and can_corrupt and rng.random() < cfg.corruption:
                feats[view.id, n - 1] = _draw_corrupt(rng, bank, scene, n, cfg)
                corrupted.append((view.id, n))
            else:
                proto = bank.prototypes[scene.catalog_id(n)]
                z = proto + cfg.sigma_feat * rng.standard_normal(c)
                feats[view.id, n - 1] = z / np.linalg.norm(z)
    objects = ObjectFeatureSet(feats, valid)

    dense_maps = None
    if dense:
        dense_maps = []
        for view in scene.views:
            lookup = np.concatenate([bank.distractor[None, :], feats[view.id]], axis=0)
            cells = view.mask2d[:: cfg.patch, :: cfg.patch].astype(np.int64)
            grid = lookup[cells]
            dense_maps.append(DenseFeatureMap(grid, image_height=cfg.image_height,
                                              image_width=cfg.image_width))
    return SynthFeatures(objects=objects, dense=dense_maps, corrupted=tuple(corrupted))


def make_contexts(bank: ConceptBank, scene: Scene, strategy: str = "scene",
                  reduction: str = "max") -> dict[int, QueryContext]:
    from .prompts import scene_contexts

    return scene_contexts(bank.prompt_bank, scene, strategy=strategy, reduction=reduction)


# --------------------------------------------------------------------------
# naive fusion oracle (independent reference; no shared code with fusion.py)

def _oracle_cos(a, b) -> float:
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def _oracle_g(z, ctx: QueryContext) -> float:
    pos = _oracle_cos(z, ctx.positive)
    if ctx.num_negatives == 0:
        neg = 0.0
    else:
        sims = [_oracle_cos(z, q) for q in ctx.negatives]
        neg = max(sims) if ctx.reduction == "max" else sum(sims) / len(sims)
    return max(0.0, pos - neg)


def oracle_fuse_pointwise(dense_maps, vis: VisibilityMap, mode: str,
                          labels=None, contexts=None) -> np.ndarray:
    """Triple-loop reference for point-wise fusion; returns (M, C) rows."""
    v, m = vis.point_vis.shape
    c = dense_maps[0].grid.shape[2]
    out = np.zeros((m, c))
    for i in range(m):
        num = [0.0] * c
        den = 0.0
        for vi in range(v):
            if vis.point_vis[vi, i] != 1:
                continue
            px, py = int(vis.pixel_of[vi, i, 0]), int(vis.pixel_of[vi, i, 1])
            grid = dense_maps[vi].grid
            sy = dense_maps[vi].image_height // grid.shape[0]
            sx = dense_maps[vi].image_width // grid.shape[1]
            z = grid[py // sy, px // sx]
            if mode == "uniform":
                w = 1.0
            else:
                n = int(labels.labels[i])
                w = _oracle_g(z, contexts[n]) if n != 0 else 1.0
            if w > 0.0:
                den += w
                for d in range(c):
                    num[d] += w * float(z[d])
        if den > 0.0:
            out[i] = [x / den for x in num]
    return out


def oracle_fuse_objectwise(objfeats: ObjectFeatureSet, objvis: ObjectVisibility,
                           contexts=None, weighting: str = "lambda-g") -> np.ndarray:
    """Triple-loop reference for object-wise fusion; returns (N, C) rows."""
    v, n_obj, c = objfeats.features.shape
    out = np.zeros((n_obj, c))
    for j in range(n_obj):
        weights = []
        lam_weights = []
        for vi in range(v):
            count = float(objvis.counts[vi, j + 1])
            ok = bool(objfeats.valid[vi, j]) and count > 0
            lam_weights.append(count if ok else 0.0)
            if not ok:
                weights.append(0.0)
                continue
            z = objfeats.features[vi, j]
            if weighting == "uniform":
                weights.append(1.0)
            elif weighting == "lambda":
                weights.append(count)
            elif weighting == "g":
                weights.append(_oracle_g(z, contexts[j + 1]))
            else:
                weights.append(count * _oracle_g(z, contexts[j + 1]))
        if sum(weights) == 0.0 and weighting in ("g", "lambda-g"):
            weights = lam_weights
        den = sum(weights)
        if den == 0.0:
            continue
        for vi in range(v):
            if weights[vi] > 0.0:
                for d in range(c):
                    out[j, d] += weights[vi] * float(objfeats.features[vi, j, d])
        out[j] /= den
    return out


def oracle_fuse(mode: str, **kwargs) -> np.ndarray:
    """Dispatch to the naive point- or object-wise reference implementation."""
    if mode == "point":
        return oracle_fuse_pointwise(kwargs["dense_maps"], kwargs["vis"], kwargs.get("weights", "uniform"),
                                     kwargs.get("labels"), kwargs.get("contexts"))
    if mode == "object":
        return oracle_fuse_objectwise(kwargs["objfeats"], kwargs["objvis"],
                                      kwargs.get("contexts"), kwargs.get("weights", "lambda-g"))
    raise ValidationError(f"unknown oracle mode {mode!r}")


# --------------------------------------------------------------------------
# ground-truth sidecar

def save_truth(path: str, truth: SceneTruth, cfg: SynthConfig) -> None:
    payload = {
        "primitives": [p.to_json() for p in truth.primitives],
        "instance_ids": list(truth.instance_ids),
        "camera_centers": [[float(x) for x in row] for row in truth.camera_centers],
        "table_extent": truth.table_extent,
        "camera_radius": truth.camera_radius,
        "table_height": truth.table_height,
        "corrupted": [list(t) for t in truth.corrupted],
        "config": {
            "seed": cfg.seed, "num_objects": cfg.num_objects, "num_views": cfg.num_views,
            "image_width": cfg.image_width, "image_height": cfg.image_height,
            "focal": cfg.focal, "camera_radius": cfg.camera_radius,
            "table_extent": cfg.table_extent, "embed_dim": cfg.embed_dim,
            "num_prompts": cfg.num_prompts, "sigma_text": cfg.sigma_text,
            "sigma_feat": cfg.sigma_feat, "corruption": cfg.corruption,
            "catalog_size": cfg.num_catalog, "patch": cfg.patch,
            "table_height": cfg.table_height,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_truth(path: str) -> SceneTruth:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return SceneTruth(
        primitives=tuple(primitive_from_json(p) for p in payload["primitives"]),
        instance_ids=tuple(int(i) for i in payload["instance_ids"]),
        camera_centers=np.array(payload["camera_centers"], dtype=np.float64),
        table_extent=float(payload["table_extent"]),
        camera_radius=float(payload["camera_radius"]),
        table_height=float(payload.get("table_height", 0.0)),
        corrupted=tuple((int(a), int(b)) for a, b in payload["corrupted"]),
    )
