"""Segmentation evaluation: IoU, mIoU, Pr@X, mAcc@X, and AP25.

Conventions fixed here for reproducibility (both are interpretations and
are flagged as such in emitted reports):
  * Pr@X uses a strict inequality, IoU > X/100.
  * mAcc@X is class-balanced Pr@X: Pr@X computed within each class present
    in the ground truth, averaged over classes.

AP25 scores unscored instance partitions (density clustering emits no
confidences): clusters and ground-truth instances are matched greedily by
descending IoU, one-to-one, and the score is
(#matched pairs with IoU >= 0.25) / max(#clusters, #gt instances).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError

INTERPRETATION_NOTES = (
    "Pr@X uses strict inequality IoU > X/100",
    "mAcc@X is class-balanced Pr@X (per-class mean of Pr@X over classes present in gt)",
    "AP25 is the unscored matched-pairs ratio (no confidence ranking)",
)


@dataclass(frozen=True)
class EvalRecord:
    query_id: str
    iou: float
    pred_count: int
    gt_count: int
    class_id: int | None = None  # needed for class-balanced metrics


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks.

    Both empty -> 1.0; exactly one empty -> 0.0.
    """
    p = np.asarray(pred).astype(bool).reshape(-1)
    g = np.asarray(gt).astype(bool).reshape(-1)
    if p.shape != g.shape:
        raise ValidationError(f"mask lengths differ: {p.shape[0]} vs {g.shape[0]}")
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def miou(records: list[EvalRecord]) -> float:
    if not records:
        raise ValidationError("no records to aggregate")
    return float(np.mean([r.iou for r in records]))


def pr_at(records: list[EvalRecord], x: int) -> float:
    """Fraction of queries with IoU strictly above x/100."""
    if not records:
        raise ValidationError("no records to aggregate")
    thr = x / 100.0
    return float(np.mean([r.iou > thr for r in records]))


def macc_at(records: list[EvalRecord], x: int) -> float:
    """Class-balanced Pr@X over the classes present in the records."""
    if not records:
        raise ValidationError("no records to aggregate")
    by_class: dict[int, list[EvalRecord]] = {}
    for r in records:
        if r.class_id is None:
            raise ValidationError("mAcc@X needs class ids on every record")
        by_class.setdefault(r.class_id, []).append(r)
    return float(np.mean([pr_at(rs, x) for _, rs in sorted(by_class.items())]))


def _instance_masks(labels: np.ndarray) -> dict[int, np.ndarray]:
    lab = np.asarray(labels).reshape(-1)
    return {int(k): lab == k for k in np.unique(lab) if k != 0}


def ap25(pred_instances: np.ndarray, gt_instances: np.ndarray, thr: float = 0.25) -> float:
    """Greedy one-to-one instance matching at an IoU threshold.

    Label 0 means noise/background on both sides and is excluded.
    """
    pred = np.asarray(pred_instances).reshape(-1)
    gt = np.asarray(gt_instances).reshape(-1)
    if pred.shape != gt.shape:
        raise ValidationError("instance labelings must cover the same points")
    pmasks = _instance_masks(pred)
    gmasks = _instance_masks(gt)
    if not pmasks and not gmasks:
        return 1.0
    if not pmasks or not gmasks:
        return 0.0
    pairs = []
    for pk, pm in pmasks.items():
        for gk, gm in gmasks.items():
            pairs.append((iou(pm, gm), pk, gk))
    # descending IoU; deterministic tie-break on (pred id, gt id)
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    matched = 0
    for ov, pk, gk in pairs:
        if ov < thr:
            break
        if pk in used_p or gk in used_g:
            continue
        used_p.add(pk)
        used_g.add(gk)
        matched += 1
    return matched / max(len(pmasks), len(gmasks))


def aggregate(records: list[EvalRecord], with_macc: bool = False) -> dict:
    out = {
        "num_queries": len(records),
        "miou": miou(records),
        "pr@25": pr_at(records, 25),
        "pr@50": pr_at(records, 50),
        "pr@75": pr_at(records, 75),
    }
    if with_macc:
        out["macc@25"] = macc_at(records, 25)
    return out


def write_report_json(path: str, records: list[EvalRecord], aggregates: dict,
                      extra: dict | None = None) -> None:
    payload = {
        "records": [asdict(r) for r in records],
        "aggregates": aggregates,
        "interpretation_notes": list(INTERPRETATION_NOTES),
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path: str, rows: list[dict]) -> None:
    """Table-style CSV: one configuration per row, metric columns."""
    if not rows:
        raise ValidationError("no rows to write")
    fields = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
