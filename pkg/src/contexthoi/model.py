"""Feature encoder, instance decoder, context extractor and the full dual-branch model."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
from torch import Tensor, nn

from .aggregator import AggregatedFeature, ContextAggregator
from .config import ModelConfig, SwitchConfig
from .explorer import SemanticExplorer, SemanticGuidance
from .geometry import DistanceMargin
from .layers import MLP, DecoderLayer, EncoderLayer, pair_concat, sine_position_encoding
from .teacher import TeacherAdapter, build_teacher, category_prompts, teacher_visual_feature

log = logging.getLogger(__name__)


@dataclass
class VisualMemory:
    tokens: Tensor  # [B, HW, C]
    pos: Tensor  # [HW, C]
    spatial_shape: tuple[int, int]


@dataclass
class FeatureBundle:
    z: Tensor  # [B, n, C] final decoder layer
    per_layer: Tensor  # [B, L_dec, n, C]
    guided: Tensor  # [n, C] positional guided embedding
    pad_mask: Tensor  # [n] bool
    attention: Tensor  # [B, n, HW] last-layer cross-attention


@dataclass
class ModelOutput:
    human_boxes: Tensor  # [B, N_q, 4] cxcywh
    object_boxes: Tensor  # [B, N_q, 4]
    object_logits: Tensor  # [B, N_q, N_o + 1]
    hoi_logits: Tensor  # [B, N_q, N_hoi]
    context_boxes: Optional[Tensor]  # [B, N_q, 4] or None without context branch
    instance: FeatureBundle
    context: Optional[FeatureBundle]
    guidance: Optional[SemanticGuidance]
    aggregated: AggregatedFeature
    memory: VisualMemory
    extras: dict = field(default_factory=dict)


class ToyBackbone(nn.Module):
    """Three stride-2 convolutions; output stride 8."""

    stride = 8

    def __init__(self, width: int = 16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(width, 2 * width, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(2 * width, 4 * width, 3, 2, 1), nn.ReLU(),
        )
        self.num_channels = 4 * width

    def forward(self, x):
        return self.body(x)


class ResNetBackbone(nn.Module):
    """torchvision ResNet-50 trunk (no classifier); output stride 32."""

    stride = 32

    def __init__(self):
        super().__init__()
        import torchvision

        net = torchvision.models.resnet50(weights=None)
        self.body = nn.Sequential(*list(net.children())[:-2])
        self.num_channels = 2048

    def forward(self, x):
        return self.body(x)


def build_backbone(name: str) -> nn.Module:
    if name == "toy":
        return ToyBackbone()
    if name == "resnet50":
        return ResNetBackbone()
    raise ValueError(f"unknown backbone {name!r}")


class FeatureEncoder(nn.Module):
    """Backbone, 1x1 projection to the hidden width and a transformer encoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.hidden_dim = cfg.hidden_dim
        self.backbone = build_backbone(cfg.backbone)
        self.input_proj = nn.Conv2d(self.backbone.num_channels, cfg.hidden_dim, 1)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.hidden_dim, cfg.nheads, cfg.dim_feedforward, cfg.dropout)
            for _ in range(cfg.enc_layers))

    def output_shape(self, height: int, width: int) -> tuple[int, int]:
        s = self.backbone.stride
        return -(-height // s), -(-width // s)

    def forward(self, images: Tensor) -> VisualMemory:
        h, w = images.shape[-2:]
        s = self.backbone.stride
        if h < s or w < s:
            raise ValueError(f"image {h}x{w} is smaller than the backbone stride {s}")
        feat = self.input_proj(self.backbone(images))
        fh, fw = feat.shape[-2:]
        tokens = feat.flatten(2).transpose(1, 2)
        pos = sine_position_encoding(fh, fw, self.hidden_dim, dtype=tokens.dtype, device=tokens.device)
        for layer in self.layers:
            tokens = layer(tokens, pos)
        return VisualMemory(tokens, pos, (fh, fw))


class QueryDecoder(nn.Module):
    """Transformer decoder driven by learned queries and a learned guided embedding.

    Shared by the instance decoder (2N_q queries) and the context extractor
    (N_q queries); the two differ only in their query count.
    """

    def __init__(self, num_queries: int, cfg: ModelConfig):
        super().__init__()
        self.num_queries = num_queries
        self.query = nn.Parameter(torch.randn(num_queries, cfg.hidden_dim))
        self.guided = nn.Parameter(torch.randn(num_queries, cfg.hidden_dim))
        self.layers = nn.ModuleList(
            DecoderLayer(cfg.hidden_dim, cfg.nheads, cfg.dim_feedforward, cfg.dropout)
            for _ in range(cfg.dec_layers))
        self.norm = nn.LayerNorm(cfg.hidden_dim)

    def forward(self, memory: VisualMemory, offset: Optional[Tensor] = None,
                pad_mask: Optional[Tensor] = None) -> FeatureBundle:
        b = memory.tokens.shape[0]
        tgt = self.query.expand(b, -1, -1)
        if offset is not None:
            if offset.shape[-2:] != tgt.shape[-2:]:
                raise ValueError(f"guidance offset {tuple(offset.shape)} does not match "
                                 f"queries {tuple(tgt.shape)}")
            tgt = tgt + offset
        if pad_mask is None:
            pad_mask = torch.zeros(self.num_queries, dtype=torch.bool, device=tgt.device)
        keep = (~pad_mask)[None, :, None]
        tgt = torch.where(keep, tgt, torch.zeros_like(tgt))
        query_padding = pad_mask.expand(b, -1) if pad_mask.any() else None
        pos = self.guided.expand(b, -1, -1)
        mem_pos = memory.pos.expand(b, -1, -1)
        outs, weights = [], None
        for layer in self.layers:
            tgt, weights = layer(tgt, memory.tokens, pos, mem_pos, query_padding=query_padding)
            tgt = torch.where(keep, tgt, torch.zeros_like(tgt))
            outs.append(torch.where(keep, self.norm(tgt), torch.zeros_like(tgt)))
        per_layer = torch.stack(outs, dim=1)
        return FeatureBundle(per_layer[:, -1], per_layer, self.guided, pad_mask, weights)


class ContextHOI(nn.Module):
    """Dual-branch HOI detector.

    Instance branch: 2N_q queries, adjacent pairs (2k, 2k+1) form human-object
    pair k whose concatenated features feed the box and object-class heads.
    Context branch: N_q queries predicting context boxes. Both branches and the
    teacher's visual map are fused by the aggregator into HOI logits.
    """

    def __init__(self, cfg: ModelConfig, switches: SwitchConfig, object_names: Sequence[str],
                 verb_names: Sequence[str], hoi_pairs: Sequence[tuple[int, int]]):
        super().__init__()
        self.cfg = cfg
        self.switches = switches
        self.num_objects = len(object_names)
        self.num_verbs = len(verb_names)
        self.num_hoi = len(hoi_pairs)
        self.register_buffer("hoi_object", torch.tensor([o for o, _ in hoi_pairs]), persistent=False)
        self.register_buffer("hoi_verb", torch.tensor([v for _, v in hoi_pairs]), persistent=False)
        d, nq = cfg.hidden_dim, cfg.num_queries

        self.encoder = FeatureEncoder(cfg)
        self.instance_decoder = QueryDecoder(2 * nq, cfg)
        self.human_box_head = MLP(2 * d, d, 4, 3)
        self.object_box_head = MLP(2 * d, d, 4, 3)
        self.object_class_head = nn.Linear(2 * d, self.num_objects + 1)

        self.context_extractor = QueryDecoder(nq, cfg)
        self.context_box_head = MLP(d, d, 4, 3)

        self.teacher = build_teacher(cfg.teacher, dim=cfg.teacher_dim, patch=cfg.teacher_patch)
        object_text = verb_text = None
        if self.teacher is not None:
            obj_prompts, verb_prompts = category_prompts(object_names, verb_names)
            object_text = self.teacher.text_embed(obj_prompts)
            verb_text = self.teacher.text_embed(verb_prompts)
        self.explorer = SemanticExplorer(d, nq, self.num_objects, self.num_verbs,
                                         object_text, verb_text, cfg.gumbel_temperature)
        self.teacher_adapter = TeacherAdapter(cfg.teacher_dim, d)
        self.aggregator = ContextAggregator(d, nq, self.num_hoi, cfg.dec_layers, cfg.nheads,
                                            cfg.dim_feedforward, cfg.dropout)
        self.tau = DistanceMargin(cfg.tau_init)

    def forward(self, images: Tensor, generator: Optional[torch.Generator] = None) -> ModelOutput:
        sw = self.switches
        memory = self.encoder(images)
        b, d, nq = images.shape[0], self.cfg.hidden_dim, self.cfg.num_queries

        guidance = None
        instance_offset = context_offset = context_pad = None
        if sw.semantic_explorer:
            guidance = self.explorer(memory.tokens, generator)
            instance_offset = guidance.instance_offset
            context_offset = guidance.context_offset
            context_pad = guidance.context_query_padding

        ins = self.instance_decoder(memory, instance_offset)
        pairs = pair_concat(ins.z)
        human_boxes = self.human_box_head(pairs).sigmoid()
        object_boxes = self.object_box_head(pairs).sigmoid()
        object_logits = self.object_class_head(pairs)

        ctx = context_boxes = None
        if sw.context_branch:
            ctx = self.context_extractor(memory, context_offset, context_pad)
            context_boxes = self.context_box_head(ctx.z).sigmoid()
            z_c = ctx.z
        else:
            z_c = memory.tokens.new_zeros(b, nq, d)
            context_pad = None

        teacher = self.teacher if sw.teacher_branch else None
        z_v = teacher_visual_feature(images, teacher, self.teacher_adapter, d)
        agg = self.aggregator(ins.z, z_c, z_v, context_pad)
        return ModelOutput(human_boxes, object_boxes, object_logits, agg.hoi_logits,
                           context_boxes, ins, ctx, guidance, agg, memory)

    def auxiliary_predictions(self, out: ModelOutput) -> list[dict]:
        """Head predictions from every decoder layer except the last (deep supervision)."""
        aux = []
        for i in range(out.instance.per_layer.shape[1] - 1):
            pairs = pair_concat(out.instance.per_layer[:, i])
            aux.append(dict(human_boxes=self.human_box_head(pairs).sigmoid(),
                            object_boxes=self.object_box_head(pairs).sigmoid(),
                            object_logits=self.object_class_head(pairs),
                            hoi_logits=out.aggregated.hoi_logits_per_layer[i]))
        return aux
