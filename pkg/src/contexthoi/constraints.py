"""Spatially contrastive constraints between the instance and context branches.

* feature constraint: mean absolute similarity of the per-query decoder
  feature stacks of the two branches;
* region constraint: ``exp(-L1)`` between the branches' guided embeddings;
* instance constraint: distance-weighted reversed GIoU between predicted
  context boxes and the ground-truth human and object boxes.

Padded context queries are excluded everywhere with ``torch.where`` so that
whatever values sit in padded rows cannot leak into a loss or its gradient.
"""
from __future__ import annotations

import logging
from typing import Optional, Union

import torch
from torch import Tensor

from .geometry import EPS, box_cxcywh_to_xyxy, dynamic_distance_weight, generalized_box_iou

log = logging.getLogger(__name__)


def _valid(pad_mask: Optional[Tensor], shape, device) -> Tensor:
    if pad_mask is None:
        return torch.ones(shape, dtype=torch.bool, device=device)
    return (~pad_mask).expand(shape)


def feature_constraint(stack_ins: Tensor, stack_c: Tensor, pad_mask: Optional[Tensor] = None,
                       norm: str = "cosine_l2", eps: float = EPS) -> Tensor:
    """Mean |similarity| between per-query feature stacks.

    stack_ins, stack_c: [..., N_q, L_dec, C] (instance stack already reduced to
    N_q rows). Each query's [L_dec, C] stack is flattened before comparing.
    ``norm="cosine_l2"`` divides by the product of L2 norms (cosine similarity);
    ``"formula_l1"`` divides by the product of L1 norms instead.
    """
    a = stack_ins.flatten(-2)
    c = stack_c.flatten(-2)
    valid = _valid(pad_mask, a.shape[:-1], a.device)
    a = torch.where(valid[..., None], a, torch.ones_like(a))
    c = torch.where(valid[..., None], c, torch.ones_like(c))
    ord_ = {"cosine_l2": 2, "formula_l1": 1}[norm]
    denom = torch.linalg.vector_norm(a, ord_, dim=-1) * torch.linalg.vector_norm(c, ord_, dim=-1) + eps
    sim = (a * c).sum(-1).abs() / denom
    n_valid = valid.sum()
    if n_valid == 0:
        log.warning("feature constraint: every query is padded; returning 0")
        return sim.sum() * 0.0
    return torch.where(valid, sim, torch.zeros_like(sim)).sum() / n_valid


def region_constraint(guided_ins: Tensor, guided_c: Tensor) -> Tensor:
    """Mean over queries of ``exp(-||p_ins - p_c||_1)``; both inputs [..., N_q, C]."""
    return torch.exp(-(guided_ins - guided_c).abs().sum(-1)).mean()


def instance_constraint(context_boxes: Tensor, gt_human: Tensor, gt_object: Tensor,
                        tau: Union[Tensor, float], pad_mask: Optional[Tensor] = None,
                        eps: float = EPS, reduction: str = "sum",
                        distance_weight: bool = True) -> Tensor:
    """Distance-weighted reversed GIoU, in ``[0, 2]``.

    context_boxes: [N_q, 4] predicted context boxes (cxcywh); gt_human and
    gt_object: [4] or [N_q, 4] ground-truth boxes (cxcywh) assigned to each
    context query. Rows flagged in ``pad_mask`` are ignored. With
    ``distance_weight=False`` the weights are fixed to 1 (plain reversed GIoU).
    """
    n = context_boxes.shape[-2]
    gt_human = gt_human.expand(n, 4)
    gt_object = gt_object.expand(n, 4)
    valid = _valid(pad_mask, (n,), context_boxes.device)
    pred = torch.where(valid[:, None], context_boxes, gt_human)
    pred_xyxy = box_cxcywh_to_xyxy(pred)
    terms = 2.0
    for gt in (gt_human, gt_object):
        giou = generalized_box_iou(box_cxcywh_to_xyxy(gt), pred_xyxy)
        if distance_weight:
            giou = dynamic_distance_weight(gt, pred, tau, eps, reduction) * giou
        terms = terms + giou
    n_valid = valid.sum()
    if n_valid == 0:
        return context_boxes.sum() * 0.0
    return torch.where(valid, terms, torch.zeros_like(terms)).sum() / (2 * n_valid)


def spatial_constraint_total(l_fc, l_rc, l_ic, lambda_fc=4.0, lambda_rc=1.0, lambda_ic=4.0):
    return lambda_fc * l_fc + lambda_rc * l_rc + lambda_ic * l_ic
