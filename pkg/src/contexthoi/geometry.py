"""Differentiable box geometry shared by the losses, the matcher and evaluation.

Boxes live in normalized image coordinates. Two layouts are used:

* center-size ``(cx, cy, w, h)``, the layout the prediction heads emit;
* corner ``(x0, y0, x1, y1)``, the layout the overlap measures work on.

All functions accept tensors with a trailing dimension of 4 and broadcast over
the leading dimensions. Degenerate (zero-area) inputs never produce NaN: IoU is
0 when the union is empty and GIoU is 0 when the enclosing box is empty.
"""
import math
from typing import Union

import torch
import torch.nn.functional as F
from torch import Tensor, nn

EPS = 1e-8


def _check_finite(*tensors: Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise ValueError("box coordinates must be finite")


def box_cxcywh_to_xyxy(boxes: Tensor) -> Tensor:
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=-1)


def box_xyxy_to_cxcywh(boxes: Tensor) -> Tensor:
    x0, y0, x1, y1 = boxes.unbind(-1)
    return torch.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], dim=-1)


def box_area(boxes: Tensor) -> Tensor:
    """Area of corner-form boxes; inverted boxes count as zero area."""
    wh = (boxes[..., 2:] - boxes[..., :2]).clamp(min=0)
    return wh[..., 0] * wh[..., 1]


def _overlap_terms(a: Tensor, b: Tensor):
    area_a = box_area(a)
    area_b = box_area(b)
    lt = torch.max(a[..., :2], b[..., :2])
    rb = torch.min(a[..., 2:], b[..., 2:])
    inter_wh = (rb - lt).clamp(min=0)
    inter = inter_wh[..., 0] * inter_wh[..., 1]
    union = area_a + area_b - inter
    return inter, union


def _safe_div(num: Tensor, den: Tensor) -> Tensor:
    # zero where den == 0, with a gradient that stays finite
    ok = den > 0
    return torch.where(ok, num / torch.where(ok, den, torch.ones_like(den)), torch.zeros_like(num))


def box_iou(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise IoU of corner-form boxes ``a`` and ``b`` (broadcasting)."""
    _check_finite(a, b)
    inter, union = _overlap_terms(a, b)
    return _safe_div(inter, union)


def generalized_box_iou(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise generalized IoU of corner-form boxes, in ``[-1, 1]``.

    ``giou = iou - (enclose - union) / enclose`` where ``enclose`` is the area of
    the smallest axis-aligned box covering both inputs.
    """
    _check_finite(a, b)
    inter, union = _overlap_terms(a, b)
    iou = _safe_div(inter, union)
    lt = torch.min(a[..., :2], b[..., :2])
    rb = torch.max(a[..., 2:], b[..., 2:])
    wh = (rb - lt).clamp(min=0)
    enclose = wh[..., 0] * wh[..., 1]
    giou = iou - _safe_div(enclose - union, enclose)
    return torch.where(enclose > 0, giou, torch.zeros_like(giou))


def pairwise_box_iou(a: Tensor, b: Tensor) -> Tensor:
    """[N, 4] x [M, 4] corner boxes -> [N, M] IoU matrix."""
    return box_iou(a[:, None, :], b[None, :, :])


def pairwise_generalized_box_iou(a: Tensor, b: Tensor) -> Tensor:
    """[N, 4] x [M, 4] corner boxes -> [N, M] GIoU matrix."""
    return generalized_box_iou(a[:, None, :], b[None, :, :])


def box_distance(a: Tensor, b: Tensor, reduction: str = "sum") -> Tensor:
    """L1 gap between center-size boxes, reduced over the four coordinates.

    ``reduction`` is ``"sum"`` (default) or ``"mean"``.
    """
    _check_finite(a, b)
    gap = (a - b).abs()
    if reduction == "sum":
        return gap.sum(-1)
    if reduction == "mean":
        return gap.mean(-1)
    raise ValueError(f"unknown distance reduction {reduction!r}")


def dynamic_distance_weight(
    a: Tensor,
    b: Tensor,
    tau: Union[Tensor, float],
    eps: float = EPS,
    reduction: str = "sum",
) -> Tensor:
    """``exp(-|a - b| / (tau + eps))`` for center-size boxes ``a`` and ``b``.

    The weight is 1 for coincident boxes and decays towards 0 as they separate;
    ``tau`` sets the decay length and may be a learnable tensor.
    """
    tau = torch.as_tensor(tau, dtype=a.dtype, device=a.device)
    denom = tau + eps
    if not bool((denom > 0).all()):
        raise ValueError(f"tau + eps must be positive, got {denom.detach().min().item()}")
    return torch.exp(-box_distance(a, b, reduction) / denom)


def _inverse_softplus(y: float) -> float:
    return y + math.log(-math.expm1(-y))


class DistanceMargin(nn.Module):
    """Learnable positive margin ``tau`` of the dynamic distance weight.

    Stored as ``softplus(raw)`` so it cannot reach zero during training.
    """

    def __init__(self, init: float = 0.5):
        super().__init__()
        if init <= 0:
            raise ValueError("tau must be initialised positive")
        self.raw = nn.Parameter(torch.tensor(_inverse_softplus(init)))

    def forward(self) -> Tensor:
        return F.softplus(self.raw)
