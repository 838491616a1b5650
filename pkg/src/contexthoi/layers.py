"""Transformer building blocks (post-norm, DETR style) and small helpers."""
import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn


class MLP(nn.Module):
    """Very simple multi-layer perceptron (also called FFN)."""

    def __init__(self, input_dim, hidden_dim, output_dim, num_layers):
        super().__init__()
        self.num_layers = num_layers
        h = [hidden_dim] * (num_layers - 1)
        self.layers = nn.ModuleList(nn.Linear(n, k) for n, k in zip([input_dim] + h, h + [output_dim]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = F.relu(layer(x)) if i < self.num_layers - 1 else layer(x)
        return x


def sine_position_encoding(h: int, w: int, dim: int, temperature: float = 10000.0,
                           dtype=torch.float32, device=None) -> Tensor:
    """Normalized 2D sinusoidal encoding, shape [h*w, dim] (row-major tokens)."""
    if dim % 4:
        raise ValueError("positional encoding dim must be divisible by 4")
    npf = dim // 2
    scale = 2 * math.pi
    eps = 1e-6
    y = torch.arange(1, h + 1, dtype=dtype, device=device)[:, None].expand(h, w)
    x = torch.arange(1, w + 1, dtype=dtype, device=device)[None, :].expand(h, w)
    y = y / (h + eps) * scale
    x = x / (w + eps) * scale
    dim_t = torch.arange(npf, dtype=dtype, device=device)
    dim_t = temperature ** (2 * torch.div(dim_t, 2, rounding_mode="floor") / npf)
    px = x[..., None] / dim_t
    py = y[..., None] / dim_t
    px = torch.stack([px[..., 0::2].sin(), px[..., 1::2].cos()], dim=-1).flatten(-2)
    py = torch.stack([py[..., 0::2].sin(), py[..., 1::2].cos()], dim=-1).flatten(-2)
    return torch.cat([py, px], dim=-1).reshape(h * w, dim)


class EncoderLayer(nn.Module):
    def __init__(self, d_model, nhead, dim_feedforward, dropout=0.0):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(d_model, nhead, dropout=dropout, batch_first=True)
        self.linear1 = nn.Linear(d_model, dim_feedforward)
        self.linear2 = nn.Linear(dim_feedforward, d_model)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, src, pos):
        q = k = src + pos
        src = self.norm1(src + self.dropout(self.self_attn(q, k, src, need_weights=False)[0]))
        ffn = self.linear2(self.dropout(F.relu(self.linear1(src))))
        return self.norm2(src + self.dropout(ffn))


class DecoderLayer(nn.Module):
    """Self-attention over queries, cross-attention into a memory, feed-forward."""

    def __init__(self, d_model, nhead, dim_feedforward, dropout=0.0):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(d_model, nhead, dropout=dropout, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(d_model, nhead, dropout=dropout, batch_first=True)
        self.linear1 = nn.Linear(d_model, dim_feedforward)
        self.linear2 = nn.Linear(dim_feedforward, d_model)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, tgt, memory, query_pos, memory_pos,
                query_padding: Optional[Tensor] = None,
                memory_padding: Optional[Tensor] = None):
        q = k = tgt + query_pos
        sa = self.self_attn(q, k, tgt, key_padding_mask=query_padding, need_weights=False)[0]
        tgt = self.norm1(tgt + self.dropout(sa))
        ca, weights = self.cross_attn(tgt + query_pos, memory + memory_pos, memory,
                                      key_padding_mask=memory_padding)
        tgt = self.norm2(tgt + self.dropout(ca))
        ffn = self.linear2(self.dropout(F.relu(self.linear1(tgt))))
        return self.norm3(tgt + self.dropout(ffn)), weights


def pair_reduce(x: Tensor, dim: int = -2) -> Tensor:
    """Mean of adjacent query rows (2k, 2k+1) along ``dim``."""
    dim = dim % x.dim()
    shape = list(x.shape)
    if shape[dim] % 2:
        raise ValueError("pair reduction needs an even number of queries")
    shape[dim: dim + 1] = [shape[dim] // 2, 2]
    return x.reshape(shape).mean(dim + 1)


def pair_concat(x: Tensor) -> Tensor:
    """[..., 2N, C] -> [..., N, 2C]: features of query 2k and 2k+1 side by side."""
    *lead, n, c = x.shape
    if n % 2:
        raise ValueError("pair concatenation needs an even number of queries")
    return x.reshape(*lead, n // 2, 2 * c)
