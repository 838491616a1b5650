"""Hungarian set matching, the conventional set-prediction HOI losses and the total loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment
from torch import Tensor

from .config import LossConfig, ModelConfig, SwitchConfig
from .constraints import (feature_constraint, instance_constraint, region_constraint,
                          spatial_constraint_total)
from .geometry import box_cxcywh_to_xyxy, generalized_box_iou, pairwise_generalized_box_iou
from .layers import pair_reduce


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss component is NaN or infinite."""


@dataclass
class Target:
    """Ground truth for one image. Boxes are normalized cxcywh."""

    human_boxes: Tensor  # [G, 4]
    object_boxes: Tensor  # [G, 4]
    object_labels: Tensor  # [G] long
    hoi_labels: Tensor  # [G, N_hoi] multi-hot

    def __len__(self):
        return self.human_boxes.shape[0]


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]  # (query index, gt index)
    unmatched: list[int]
    cost: Optional[np.ndarray] = None  # [N_q, G] matching cost used

    @property
    def query_index(self) -> list[int]:
        return [q for q, _ in self.pairs]

    @property
    def gt_index(self) -> list[int]:
        return [g for _, g in self.pairs]


def assign(cost: np.ndarray, num_queries: Optional[int] = None) -> MatchResult:
    """Globally minimal one-to-one assignment of rows (queries) to columns (gts)."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0] if cost.ndim == 2 else (num_queries or 0)
    if cost.size == 0:
        return MatchResult([], list(range(n)), cost)
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    used = {q for q, _ in pairs}
    return MatchResult(pairs, [q for q in range(n) if q not in used], cost)


def matching_cost(human_boxes, object_boxes, object_logits, hoi_logits, target: Target,
                  cfg: LossConfig) -> Tensor:
    """[N_q, G] cost: class + interaction + L1 box + negative GIoU.

    The box terms take the larger of the human and object cost for each pair.
    """
    prob = object_logits.softmax(-1)
    cost_class = -prob[:, target.object_labels]
    p = hoi_logits.sigmoid()
    t = target.hoi_labels.to(p.dtype)
    pos = (p @ t.T) / t.sum(-1).clamp_min(1)[None]
    neg = ((1 - p) @ (1 - t).T) / (1 - t).sum(-1).clamp_min(1)[None]
    cost_hoi = -(pos + neg) / 2
    cost_l1 = torch.max(torch.cdist(human_boxes, target.human_boxes, p=1),
                        torch.cdist(object_boxes, target.object_boxes, p=1))
    cost_giou = torch.max(
        -pairwise_generalized_box_iou(box_cxcywh_to_xyxy(human_boxes), box_cxcywh_to_xyxy(target.human_boxes)),
        -pairwise_generalized_box_iou(box_cxcywh_to_xyxy(object_boxes), box_cxcywh_to_xyxy(target.object_boxes)))
    return (cfg.cost_class * cost_class + cfg.cost_interaction * cost_hoi
            + cfg.cost_box * cost_l1 + cfg.cost_giou * cost_giou)


@torch.no_grad()
def match(human_boxes, object_boxes, object_logits, hoi_logits, target: Target,
          cfg: LossConfig) -> MatchResult:
    nq = human_boxes.shape[0]
    if len(target) == 0:
        return MatchResult([], list(range(nq)), np.zeros((nq, 0)))
    cost = matching_cost(human_boxes, object_boxes, object_logits, hoi_logits, target, cfg)
    return assign(cost.double().cpu().numpy())


def sigmoid_focal_loss(logits: Tensor, targets: Tensor, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Element-wise binary focal loss (unreduced)."""
    p = logits.sigmoid()
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = p * targets + (1 - p) * (1 - targets)
    loss = ce * (1 - p_t) ** gamma
    if alpha >= 0:
        loss = (alpha * targets + (1 - alpha) * (1 - targets)) * loss
    return loss


def hoi_loss(human_boxes, object_boxes, object_logits, hoi_logits, targets: Sequence[Target],
             matches: Sequence[MatchResult], cfg: LossConfig) -> dict[str, Tensor]:
    """Set-prediction losses over a batch; returns weighted components and their sum.

    Tensors are batched [B, N_q, ...]. Box and interaction terms are
    normalized by the number of ground-truth pairs in the batch; the object
    class term is a cross-entropy over all queries with the no-object class
    down-weighted. Images without ground truth only feed the class term.
    """
    b, nq, n_cls = object_logits.shape
    num_objects = n_cls - 1
    num_gt = max(sum(len(t) for t in targets), 1)

    target_classes = torch.full((b, nq), num_objects, dtype=torch.long, device=object_logits.device)
    class_weight = torch.ones(n_cls, dtype=object_logits.dtype, device=object_logits.device)
    class_weight[-1] = cfg.no_object_weight
    l1 = giou = focal = object_logits.sum() * 0.0
    for i, (tgt, m) in enumerate(zip(targets, matches)):
        if not m.pairs:
            continue
        q = torch.as_tensor(m.query_index, device=object_logits.device)
        g = torch.as_tensor(m.gt_index, device=object_logits.device)
        target_classes[i, q] = tgt.object_labels[g]
        ph, po = human_boxes[i, q], object_boxes[i, q]
        th, to = tgt.human_boxes[g], tgt.object_boxes[g]
        l1 = l1 + (ph - th).abs().sum() + (po - to).abs().sum()
        giou = giou + (1 - generalized_box_iou(box_cxcywh_to_xyxy(ph), box_cxcywh_to_xyxy(th))).sum()
        giou = giou + (1 - generalized_box_iou(box_cxcywh_to_xyxy(po), box_cxcywh_to_xyxy(to))).sum()
        hoi_target = torch.zeros_like(hoi_logits[i])
        hoi_target[q] = tgt.hoi_labels[g].to(hoi_target.dtype)
        focal = focal + sigmoid_focal_loss(hoi_logits[i], hoi_target, cfg.focal_alpha, cfg.focal_gamma).sum()
    ce = F.cross_entropy(object_logits.reshape(-1, n_cls), target_classes.reshape(-1),
                         weight=class_weight)
    parts = {
        "loss_box_l1": cfg.box_l1 * l1 / num_gt,
        "loss_giou": cfg.giou * giou / num_gt,
        "loss_object_class": cfg.object_class * ce,
        "loss_interaction": cfg.interaction * focal / num_gt,
    }
    parts["loss_hoi"] = sum(parts.values())
    return parts


def assign_context_targets(target: Target, m: MatchResult, num_queries: int):
    """Ground-truth (human, object) boxes for each context query, plus a validity mask.

    Query k takes the pair matched to instance pair k; unmatched queries take
    the matched ground-truth pair of lowest matching cost for instance pair k.
    """
    if not m.pairs:
        return None
    matched_gt = m.gt_index
    gt_for = {}
    for q, g in m.pairs:
        gt_for[q] = g
    idx = []
    for k in range(num_queries):
        if k in gt_for:
            idx.append(gt_for[k])
        else:
            row = m.cost[k, matched_gt]
            idx.append(matched_gt[int(np.argmin(row))])
    idx = torch.as_tensor(idx, device=target.human_boxes.device)
    return target.human_boxes[idx], target.object_boxes[idx]


def spatial_losses(out, targets: Sequence[Target], matches: Sequence[MatchResult], tau: Tensor,
                   model_cfg: ModelConfig, switches: SwitchConfig, cfg: LossConfig) -> dict[str, Tensor]:
    """Feature-, region- and instance-level constraints and their weighted sum."""
    zero = out.hoi_logits.sum() * 0.0
    parts = {"loss_fc": zero, "loss_rc": zero, "loss_ic": zero}
    if out.context is None or not switches.spatial_constraints:
        parts["loss_sc"] = zero
        return parts
    ins, ctx = out.instance, out.context
    pad = ctx.pad_mask
    if switches.feature_constraint:
        stack_ins = pair_reduce(ins.per_layer, dim=2).transpose(1, 2)  # [B, N_q, L, C]
        stack_c = ctx.per_layer.transpose(1, 2)
        parts["loss_fc"] = feature_constraint(stack_ins, stack_c, pad, model_cfg.similarity_norm,
                                              model_cfg.eps)
    if switches.region_constraint:
        parts["loss_rc"] = region_constraint(pair_reduce(ins.guided), ctx.guided)
    if switches.instance_constraint:
        terms = []
        for i, (tgt, m) in enumerate(zip(targets, matches)):
            gts = assign_context_targets(tgt, m, out.context_boxes.shape[1])
            if gts is None:
                continue
            terms.append(instance_constraint(out.context_boxes[i], gts[0], gts[1], tau, pad,
                                             model_cfg.eps, model_cfg.distance_reduction,
                                             switches.distance_weight))
        if terms:
            parts["loss_ic"] = torch.stack(terms).mean()
    parts["loss_sc"] = spatial_constraint_total(parts["loss_fc"], parts["loss_rc"], parts["loss_ic"],
                                                cfg.lambda_fc, cfg.lambda_rc, cfg.lambda_ic)
    return parts


def total_loss(l_hoi: Tensor, l_sc: Tensor) -> Tensor:
    loss = l_hoi + l_sc
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss: L_HOI={float(l_hoi)}, L_SC={float(l_sc)}")
    return loss


class SetCriterion:
    """Matches predictions to ground truth and evaluates the end-to-end loss."""

    def __init__(self, model_cfg: ModelConfig, switches: SwitchConfig, cfg: LossConfig):
        self.model_cfg = model_cfg
        self.switches = switches
        self.cfg = cfg

    def match(self, out, targets: Sequence[Target]) -> list[MatchResult]:
        return [match(out.human_boxes[i], out.object_boxes[i], out.object_logits[i],
                      out.hoi_logits[i], t, self.cfg) for i, t in enumerate(targets)]

    def __call__(self, out, targets: Sequence[Target], tau: Tensor,
                 matches: Optional[Sequence[MatchResult]] = None,
                 aux: Optional[Sequence[dict]] = None) -> dict[str, Tensor]:
        """Loss components plus ``loss``, the end-to-end objective.

        ``aux`` holds per-layer head predictions; when given (and ``aux_loss`` is
        on) each layer is matched on its own and its L_HOI is added to the total.
        """
        for name in ("human_boxes", "object_boxes", "object_logits", "hoi_logits"):
            if not torch.isfinite(getattr(out, name)).all():
                raise NonFiniteLossError(f"non-finite model output {name}")
        if matches is None:
            matches = self.match(out, targets)
        parts = hoi_loss(out.human_boxes, out.object_boxes, out.object_logits, out.hoi_logits,
                         targets, matches, self.cfg)
        parts.update(spatial_losses(out, targets, matches, tau, self.model_cfg, self.switches, self.cfg))
        l_hoi = parts["loss_hoi"]
        if aux and self.cfg.aux_loss:
            for i, layer in enumerate(aux):
                keys = ("human_boxes", "object_boxes", "object_logits", "hoi_logits")
                m = [match(*(layer[k][j] for k in keys), t, self.cfg) for j, t in enumerate(targets)]
                parts[f"loss_hoi_aux{i}"] = hoi_loss(*(layer[k] for k in keys), targets, m,
                                                     self.cfg)["loss_hoi"]
                l_hoi = l_hoi + parts[f"loss_hoi_aux{i}"]
        parts["loss"] = total_loss(l_hoi, parts["loss_sc"])
        return parts
