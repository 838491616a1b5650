"""Context aggregation: a multi-branch decoder whose branches share every weight.

Each branch (instance, context, teacher) runs its own stream of aggregation
queries through the same self-attention, the same cross-attention and the same
feed-forward block; only the key/value source differs. The final streams are
concatenated channel-wise and classified into HOI triplets.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor, nn

from .layers import DecoderLayer, pair_reduce

BRANCHES = ("instance", "context", "teacher")


@dataclass
class AggregatedFeature:
    z_ins: Tensor  # [B, N_q, C]
    z_c: Tensor
    z_vlm: Tensor
    fused: Tensor  # [B, N_q, 3C] in (instance, context, teacher) order
    hoi_logits: Tensor  # [B, N_q, N_hoi]
    attention: dict  # branch -> last-layer cross-attention [B, N_q, n_source]
    hoi_logits_per_layer: Tensor = None  # [L, B, N_q, N_hoi]


class ContextAggregator(nn.Module):
    def __init__(self, hidden_dim: int, num_queries: int, num_hoi: int, num_layers: int,
                 nhead: int, dim_feedforward: int, dropout: float = 0.0):
        super().__init__()
        self.query = nn.Parameter(torch.randn(num_queries, hidden_dim))
        self.query_pos = nn.Parameter(torch.randn(num_queries, hidden_dim))
        # one layer stack serves all three branches
        self.layers = nn.ModuleList(
            DecoderLayer(hidden_dim, nhead, dim_feedforward, dropout) for _ in range(num_layers))
        self.hoi_head = nn.Linear(3 * hidden_dim, num_hoi)

    def _stream(self, tgt, source, padding):
        zeros = torch.zeros_like(source)
        pos = self.query_pos.expand(tgt.shape[0], -1, -1)
        weights, states = None, []
        for layer in self.layers:
            tgt, weights = layer(tgt, source, pos, zeros, memory_padding=padding)
            states.append(tgt)
        return states, weights

    def forward(self, z_ins: Tensor, z_c: Tensor, z_v: Tensor,
                context_padding: Optional[Tensor] = None) -> AggregatedFeature:
        """z_ins: [B, 2N_q, C] instance features; z_c: [B, N_q, C]; z_v: [B, HW', C].

        The aggregation queries start from the learned embedding plus the pair
        mean of the instance features, so query k is tied to human-object pair k.
        ``context_padding`` ([N_q] or [B, N_q] bool) hides padded context rows.
        """
        b = z_ins.shape[0]
        tgt0 = self.query.expand(b, -1, -1) + pair_reduce(z_ins)
        if context_padding is not None and context_padding.dim() == 1:
            context_padding = context_padding.expand(b, -1)
        out, attn = {}, {}
        for name, source, padding in (("instance", z_ins, None),
                                      ("context", z_c, context_padding),
                                      ("teacher", z_v, None)):
            out[name], attn[name] = self._stream(tgt0, source, padding)
        fused_per_layer = torch.stack(
            [torch.cat([out[name][i] for name in BRANCHES], dim=-1) for i in range(len(self.layers))])
        logits = self.hoi_head(fused_per_layer)
        return AggregatedFeature(out["instance"][-1], out["context"][-1], out["teacher"][-1],
                                 fused_per_layer[-1], logits[-1], attn, logits)
