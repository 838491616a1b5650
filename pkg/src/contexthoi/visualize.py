"""Attention heatmaps for the highest-scoring interaction query, and metric plots."""
from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .model import ModelOutput

PANELS = ("instance_decoder", "aggregator", "context_extractor")


def _normalize(x: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def _to_image(heat: torch.Tensor, shape: tuple[int, int], size: tuple[int, int]) -> np.ndarray:
    grid = heat.reshape(1, 1, *shape).float()
    up = F.interpolate(grid, size=size, mode="bilinear", align_corners=False)[0, 0]
    return _normalize(up.numpy())


def attention_maps(out: ModelOutput, image_size: tuple[int, int], query: Optional[int] = None):
    """Three [H, W] maps in [0, 1] for one query of a single-image output.

    The instance map averages the last-layer cross-attention of the query's
    human and object slots. The context map is the context extractor's
    cross-attention. The aggregator attends over decoder outputs, not pixels,
    so its map routes the aggregation weights through the decoders' spatial
    attention (instance and context streams averaged).
    Returns (query index, {panel: map}).
    """
    if query is None:
        query = int(out.hoi_logits[0].amax(-1).argmax())
    shape = out.memory.spatial_shape
    ins_attn = out.instance.attention[0]  # [2N_q, HW]
    ins_pair = ins_attn.view(-1, 2, ins_attn.shape[-1]).mean(1)  # [N_q, HW]
    maps = {"instance_decoder": ins_pair[query]}
    agg = out.aggregated.attention
    routed = [agg["instance"][0, query] @ ins_attn]
    if out.context is not None:
        ctx_attn = out.context.attention[0]
        maps["context_extractor"] = ctx_attn[query]
        routed.append(agg["context"][0, query] @ ctx_attn)
    else:
        maps["context_extractor"] = torch.zeros_like(ins_pair[query])
    maps["aggregator"] = torch.stack(routed).mean(0)
    return query, {k: _to_image(maps[k], shape, image_size) for k in PANELS}


def _cxcywh_px(box, w, h):
    cx, cy, bw, bh = [float(v) for v in box]
    return (cx - bw / 2) * w, (cy - bh / 2) * h, bw * w, bh * h


def render(image: np.ndarray, out: ModelOutput, out_dir: str | os.PathLike,
           query: Optional[int] = None) -> dict:
    """Writes one overlay PNG per panel (numbered in panel order), ``panels.png``
    with all three side by side, and ``heatmaps.npz`` with the raw maps."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Rectangle

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = image.shape[:2]
    query, maps = attention_maps(out, (h, w), query)
    boxes = [("human", out.human_boxes[0, query], "red"),
             ("object", out.object_boxes[0, query], "cyan")]
    if out.context_boxes is not None:
        boxes.append(("context", out.context_boxes[0, query], "yellow"))

    def draw(ax, heat, title):
        ax.imshow(image)
        ax.imshow(heat, cmap="jet", alpha=0.5, vmin=0.0, vmax=1.0)
        for label, box, colour in boxes:
            x, y, bw, bh = _cxcywh_px(box, w, h)
            ax.add_patch(Rectangle((x, y), bw, bh, fill=False, edgecolor=colour, linewidth=1.5))
            ax.text(x, y, label, color=colour, fontsize=6, va="bottom")
        ax.set_title(title, fontsize=8)
        ax.axis("off")

    files = []
    for i, name in enumerate(PANELS, 1):
        fig, ax = plt.subplots(figsize=(3, 3))
        draw(ax, maps[name], name.replace("_", " "))
        path = out_dir / f"heatmap_{i}_{name}.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        files.append(path)
    fig, axes = plt.subplots(1, 3, figsize=(9, 3))
    for ax, name in zip(axes, PANELS):
        draw(ax, maps[name], name.replace("_", " "))
    fig.savefig(out_dir / "panels.png", dpi=100, bbox_inches="tight")
    plt.close(fig)
    np.savez(out_dir / "heatmaps.npz", order=np.array(PANELS), query=query,
             **{name: maps[name] for name in PANELS},
             boxes=np.array([[float(v) for v in b] for _, b, _ in boxes]),
             box_labels=np.array([label for label, _, _ in boxes]))
    return {"query": query, "files": files, "maps": maps}


def plot_metrics(records: list[dict], out_dir: str | os.PathLike) -> list[Path]:
    """One PNG per scalar found in a metrics stream, plotted against step."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = sorted({k for r in records for k, v in r.items()
                   if k not in ("step", "epoch") and isinstance(v, (int, float))})
    paths = []
    for key in keys:
        pts = [(r["step"], r[key]) for r in records if isinstance(r.get(key), (int, float))]
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="." if len(pts) < 50 else None)
        ax.set_xlabel("step")
        ax.set_title(key)
        fig.tight_layout()
        path = out_dir / f"{key}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
