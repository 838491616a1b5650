"""HOI detection mAP (Default protocol) with full / rare / non-rare splits and subsets.

A detection is a true positive when both its human and object boxes overlap an
unmatched ground-truth pair of the same HOI category with IoU above the
threshold. Detections are matched greedily by descending score; AP integrates
the precision-recall curve over all recall points (or the 11-point variant).
"""
from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch

RARE_THRESHOLD = 10


@dataclass
class CategoryMeta:
    hoi_pairs: list[tuple[int, int]]  # hoi id -> (object class, verb class)
    train_counts: list[int]

    @property
    def rare(self) -> np.ndarray:
        return np.asarray(self.train_counts) < RARE_THRESHOLD

    @property
    def num_hoi(self) -> int:
        return len(self.hoi_pairs)


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    hoi_id: int
    score: float
    human_box: tuple  # x0, y0, x1, y1 normalized
    object_box: tuple


@dataclass(frozen=True)
class GroundTruthRecord:
    image_id: str
    hoi_id: int
    human_box: tuple
    object_box: tuple


def _iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def average_precision(tp: np.ndarray, num_gt: int, mode: str = "all_points") -> float:
    """AP from a score-sorted TP indicator vector."""
    if num_gt <= 0:
        raise ValueError("AP is undefined without ground truth")
    tp = np.asarray(tp, dtype=np.float64)
    fp = 1.0 - tp
    tp_c, fp_c = np.cumsum(tp), np.cumsum(fp)
    rec = tp_c / num_gt
    prec = tp_c / np.maximum(tp_c + fp_c, np.finfo(np.float64).eps)
    if mode == "eleven_point":
        return float(np.mean([prec[rec >= t].max() if (rec >= t).any() else 0.0
                              for t in np.linspace(0, 1, 11)]))
    if mode != "all_points":
        raise ValueError(f"unknown AP mode {mode!r}")
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _sort_key(d: DetectionRecord):
    # total order so results never depend on submission order
    return (-d.score, d.image_id, d.human_box, d.object_box)


def category_tp(dets: Sequence[DetectionRecord], gts: Sequence[GroundTruthRecord],
                iou_threshold: float = 0.5) -> np.ndarray:
    """TP indicator for one category's detections, in descending-score order."""
    by_image = defaultdict(list)
    for g in gts:
        by_image[g.image_id].append(g)
    used = {img: [False] * len(v) for img, v in by_image.items()}
    tp = np.zeros(len(dets))
    for i, d in enumerate(sorted(dets, key=_sort_key)):
        best, best_j = -1.0, -1
        for j, g in enumerate(by_image.get(d.image_id, ())):
            if used[d.image_id][j]:
                continue
            ih, io = _iou(d.human_box, g.human_box), _iou(d.object_box, g.object_box)
            if ih > iou_threshold and io > iou_threshold and min(ih, io) > best:
                best, best_j = min(ih, io), j
        if best_j >= 0:
            used[d.image_id][best_j] = True
            tp[i] = 1.0
    return tp


def compute_map(dets: Iterable[DetectionRecord], gts: Iterable[GroundTruthRecord],
                meta: CategoryMeta, iou_threshold: float = 0.5,
                subset: Optional[Iterable[str]] = None, ap_mode: str = "all_points") -> dict:
    """mAP over categories that have ground truth in the evaluated images.

    ``subset`` restricts both detections and ground truth to the listed image
    ids. Returns ``full``, ``rare``, ``non_rare`` (NaN when a split has no
    evaluable category), ``per_category`` AP and bookkeeping counts.
    """
    dets, gts = list(dets), list(gts)
    if not gts:
        raise ValueError("ground-truth set is empty")
    if subset is not None:
        keep = set(subset)
        if not keep:
            raise ValueError("evaluation subset is empty")
        dets = [d for d in dets if d.image_id in keep]
        gts = [g for g in gts if g.image_id in keep]
        if not gts:
            raise ValueError("no ground truth inside the evaluation subset")
    det_by_cat, gt_by_cat = defaultdict(list), defaultdict(list)
    for d in dets:
        det_by_cat[d.hoi_id].append(d)
    for g in gts:
        gt_by_cat[g.hoi_id].append(g)

    per_category = {}
    for cat in sorted(gt_by_cat):
        tp = category_tp(det_by_cat.get(cat, []), gt_by_cat[cat], iou_threshold)
        per_category[cat] = average_precision(tp, len(gt_by_cat[cat]), ap_mode)

    rare = meta.rare

    def mean(cats):
        vals = [per_category[c] for c in cats]
        return float(np.mean(vals)) if vals else math.nan

    return {
        "full": mean(per_category),
        "rare": mean([c for c in per_category if rare[c]]),
        "non_rare": mean([c for c in per_category if not rare[c]]),
        "per_category": per_category,
        "num_images": len({g.image_id for g in gts}),
        "num_detections": len(dets),
        "num_ground_truth": len(gts),
    }


def to_verb_level(records, meta: CategoryMeta):
    """Re-key records by verb id; mAP on the result is a verb-level (role-style) AP."""
    out = []
    for r in records:
        verb = meta.hoi_pairs[r.hoi_id][1]
        out.append(type(r)(**{**r.__dict__, "hoi_id": verb}))
    return out


def verb_meta(meta: CategoryMeta) -> CategoryMeta:
    num_verbs = max(v for _, v in meta.hoi_pairs) + 1
    counts = [0] * num_verbs
    for (_, v), c in zip(meta.hoi_pairs, meta.train_counts):
        counts[v] += c
    return CategoryMeta([(-1, v) for v in range(num_verbs)], counts)


def _cxcywh_to_xyxy(b: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = b.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], -1)


@torch.no_grad()
def score_predictions(human_boxes, object_boxes, object_logits, hoi_logits, image_ids: Sequence[str],
                      hoi_object: Sequence[int], top_k: int = 100) -> list[DetectionRecord]:
    """Turn raw head outputs into ranked triplet detections.

    Queries whose most likely object class is "no object" are dropped. For the
    rest, each HOI category scores ``sigmoid(hoi logit) * p(object of that
    category)``; the ``top_k`` best records per image are kept, sorted.
    """
    obj_prob = object_logits.float().softmax(-1)
    hoi_prob = hoi_logits.float().sigmoid()
    hoi_object = torch.as_tensor(list(hoi_object), dtype=torch.long)
    hb = _cxcywh_to_xyxy(human_boxes.float()).clamp(0, 1)
    ob = _cxcywh_to_xyxy(object_boxes.float()).clamp(0, 1)
    records = []
    for i, image_id in enumerate(image_ids):
        keep = obj_prob[i].argmax(-1) != obj_prob.shape[-1] - 1
        if not keep.any():
            continue
        q = keep.nonzero().flatten()
        scores = hoi_prob[i, q] * obj_prob[i, q][:, hoi_object]  # [n_keep, N_hoi]
        flat = scores.flatten()
        k = min(top_k, flat.numel())
        top = flat.topk(k)
        for s, idx in zip(top.values.tolist(), top.indices.tolist()):
            qi, hoi = q[idx // scores.shape[1]].item(), idx % scores.shape[1]
            records.append(DetectionRecord(str(image_id), int(hoi), float(s),
                                           tuple(hb[i, qi].tolist()), tuple(ob[i, qi].tolist())))
    return records


# --- file formats -----------------------------------------------------------

def write_detections(path: str | os.PathLike, dets: Iterable[DetectionRecord]) -> None:
    """One record per line: image_id hoi_id score hx0 hy0 hx1 hy1 ox0 oy0 ox1 oy1."""
    lines = []
    for d in dets:
        boxes = " ".join(f"{v:.6f}" for v in (*d.human_box, *d.object_box))
        lines.append(f"{d.image_id} {d.hoi_id} {d.score:.6f} {boxes}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_detections(path: str | os.PathLike) -> list[DetectionRecord]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 11:
            raise ValueError(f"{path}:{lineno}: expected 11 fields, got {len(parts)}")
        vals = [float(v) for v in parts[3:]]
        out.append(DetectionRecord(parts[0], int(parts[1]), float(parts[2]),
                                   tuple(vals[:4]), tuple(vals[4:])))
    return out


def write_subset(path: str | os.PathLike, image_ids: Iterable[str]) -> None:
    ids = list(image_ids)
    Path(path).write_text("".join(f"{i}\n" for i in ids))


def read_subset(path: str | os.PathLike, known_ids: Optional[Iterable[str]] = None) -> list[str]:
    ids = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if known_ids is not None:
        known = set(known_ids)
        missing = [i for i in ids if i not in known]
        if missing:
            raise ValueError(f"{path}: unknown image ids {missing[:5]}")
    return ids


def write_report(path: str | os.PathLike, result: dict, meta: Optional[CategoryMeta] = None) -> None:
    """JSON report: split scores plus a per-category table."""
    table = []
    for cat, ap in sorted(result["per_category"].items()):
        row = {"hoi_id": int(cat), "ap": ap}
        if meta is not None:
            row.update(object=meta.hoi_pairs[cat][0], verb=meta.hoi_pairs[cat][1],
                       rare=bool(meta.rare[cat]))
        table.append(row)
    doc = {k: (None if isinstance(v, float) and math.isnan(v) else v)
           for k, v in result.items() if k != "per_category"}
    doc["per_category"] = table
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
