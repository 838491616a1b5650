"""Semantic-guided instance/context exploration.

Two explorers score every memory token against object and verb categories.
The categories with the highest pooled score each contribute one guidance
row (a similarity-weighted pooling of the memory); the rows are then mapped
along the query axis onto the instance and context queries.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .layers import MLP


@dataclass
class SemanticGuidance:
    sim_instance: Tensor  # [B, HW, N_o]
    sim_interaction: Tensor  # [B, HW, N_v]
    f_ins: Tensor  # [B, N_q, C]
    f_int: Tensor  # [B, N_q, C]
    f_c: Tensor  # [B, 2N_q, C]
    pad_ins: Tensor  # [N_q] bool
    pad_int: Tensor  # [N_q] bool
    pad_c: Tensor  # [2N_q] bool
    selected_ins: Tensor  # [B, k_o] category ids, best first
    selected_int: Tensor  # [B, k_v]
    instance_offset: Optional[Tensor] = None  # [B, 2N_q, C]
    context_offset: Optional[Tensor] = None  # [B, N_q, C]

    @property
    def context_query_padding(self) -> Tensor:
        """Context query k is padded when both guidance rows 2k and 2k+1 are padding."""
        return self.pad_c.view(-1, 2).all(-1)


def gumbel_softmax(logits: Tensor, temperature: float = 1.0, training: bool = True,
                   generator: Optional[torch.Generator] = None) -> Tensor:
    """Relaxed categorical sample over the last axis.

    In training Gumbel(0, 1) noise drawn from ``generator`` is added before
    the tempered softmax; in evaluation the noise is omitted.
    """
    if temperature <= 0:
        raise ValueError("gumbel temperature must be positive")
    if training:
        u = torch.rand(logits.shape, generator=generator, dtype=logits.dtype, device=logits.device)
        u = u.clamp(1e-20, 1 - 1e-7)
        logits = logits - torch.log(-torch.log(u))
    return F.softmax(logits / temperature, dim=-1)


def select_guidance(tokens: Tensor, sim: Tensor, num_queries: int):
    """Pick the ``num_queries`` best-scoring categories and pool the memory for each.

    tokens: [B, HW, C]; sim: [B, HW, N]. Returns guidance [B, num_queries, C],
    a [num_queries] pad mask and the selected category ids [B, min(N, num_queries)].
    Missing rows (N < num_queries) are zero and flagged in the pad mask.
    """
    b, _, c = tokens.shape
    n = sim.shape[-1]
    k = min(n, num_queries)
    pooled = sim.mean(1)  # [B, N]
    idx = pooled.topk(k, dim=-1).indices  # sorted, best first
    chosen = torch.gather(sim, 2, idx[:, None, :].expand(-1, sim.shape[1], -1))  # [B, HW, k]
    weights = chosen / chosen.sum(1, keepdim=True).clamp_min(1e-12)
    rows = torch.einsum("btk,btc->bkc", weights, tokens)
    pad = torch.zeros(num_queries, dtype=torch.bool, device=tokens.device)
    if k < num_queries:
        rows = torch.cat([rows, rows.new_zeros(b, num_queries - k, c)], dim=1)
        pad[k:] = True
    return rows, pad, idx


def text_projection(teacher_dim: int, hidden_dim: int, seed: int = 0) -> Tensor:
    """Fixed map from teacher width to hidden width (identity when equal).

    Otherwise a seeded random matrix with orthonormal rows or columns, so
    projected text embeddings keep their relative geometry as far as possible.
    """
    if teacher_dim == hidden_dim:
        return torch.eye(hidden_dim)
    g = torch.Generator().manual_seed(seed)
    m = torch.randn(max(teacher_dim, hidden_dim), min(teacher_dim, hidden_dim), generator=g)
    q, _ = torch.linalg.qr(m)
    return q if teacher_dim > hidden_dim else q.T


class QueryAxisLinear(nn.Module):
    """Dense layer acting on the query index: [B, n_in, C] -> [B, n_out, C]."""

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.linear = nn.Linear(n_in, n_out)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2] != self.linear.in_features:
            raise ValueError(f"expected {self.linear.in_features} query rows, got {x.shape[-2]}")
        return self.linear(x.transpose(-1, -2)).transpose(-1, -2)


class SemanticExplorer(nn.Module):
    def __init__(self, hidden_dim: int, num_queries: int, num_objects: int, num_verbs: int,
                 object_text: Optional[Tensor] = None, verb_text: Optional[Tensor] = None,
                 temperature: float = 1.0):
        super().__init__()
        self.num_queries = num_queries
        self.temperature = temperature
        self.instance_explorer = MLP(hidden_dim, hidden_dim, num_objects, 3)
        self.interaction_explorer = MLP(hidden_dim, hidden_dim, num_verbs, 3)
        self.instance_map = QueryAxisLinear(num_queries, 2 * num_queries)
        self.context_map = QueryAxisLinear(2 * num_queries, num_queries)
        if object_text is not None:
            self.init_from_text(self.instance_explorer, object_text)
        if verb_text is not None:
            self.init_from_text(self.interaction_explorer, verb_text)

    @staticmethod
    def init_from_text(explorer: MLP, text: Tensor) -> None:
        final = explorer.layers[-1]
        proj = text_projection(text.shape[-1], final.in_features)
        with torch.no_grad():
            final.weight.copy_(F.normalize(text.float() @ proj, dim=-1))
            final.bias.zero_()

    def similarities(self, tokens: Tensor, generator: Optional[torch.Generator] = None):
        sim_ins = gumbel_softmax(self.instance_explorer(tokens), self.temperature,
                                 self.training, generator)
        sim_int = gumbel_softmax(self.interaction_explorer(tokens), self.temperature,
                                 self.training, generator)
        return sim_ins, sim_int

    def fuse(self, f_ins: Tensor, f_int: Tensor):
        """Map guidance onto the query axes: (instance offset [B,2N_q,C], context offset [B,N_q,C])."""
        f_c = torch.cat([f_ins, f_int], dim=-2)
        return self.instance_map(f_ins), self.context_map(f_c)

    def forward(self, tokens: Tensor, generator: Optional[torch.Generator] = None) -> SemanticGuidance:
        sim_ins, sim_int = self.similarities(tokens, generator)
        f_ins, pad_ins, sel_ins = select_guidance(tokens, sim_ins, self.num_queries)
        f_int, pad_int, sel_int = select_guidance(tokens, sim_int, self.num_queries)
        instance_offset, context_offset = self.fuse(f_ins, f_int)
        return SemanticGuidance(
            sim_instance=sim_ins, sim_interaction=sim_int,
            f_ins=f_ins, f_int=f_int, f_c=torch.cat([f_ins, f_int], dim=-2),
            pad_ins=pad_ins, pad_int=pad_int, pad_c=torch.cat([pad_ins, pad_int]),
            selected_ins=sel_ins, selected_int=sel_int,
            instance_offset=instance_offset, context_offset=context_offset,
        )
