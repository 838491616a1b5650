"""One forward pass of the desk-sized dual-branch model, with the intermediate tensors.

Run: python3 demos/02_model_forward.py
"""
import torch

from contexthoi.config import ModelConfig, SwitchConfig
from contexthoi.model import ContextHOI

objects = ["cup", "dog", "bike"]
verbs = ["hold", "ride", "walk", "feed"]
pairs = [(o, v) for o in range(3) for v in range(4)]

torch.manual_seed(0)
model = ContextHOI(ModelConfig(), SwitchConfig(), objects, verbs, pairs).eval()
print(f"{sum(p.numel() for p in model.parameters()):,} parameters")

with torch.no_grad():
    out = model(torch.rand(2, 3, 64, 64))

print("visual memory tokens  ", tuple(out.memory.tokens.shape), "grid", out.memory.spatial_shape)
print("instance decoder      ", tuple(out.instance.per_layer.shape), "(batch, layers, 2*N_q, C)")
print("context extractor     ", tuple(out.context.per_layer.shape))
print("human / object boxes  ", tuple(out.human_boxes.shape), tuple(out.object_boxes.shape))
print("context boxes         ", tuple(out.context_boxes.shape))
print("interaction logits    ", tuple(out.hoi_logits.shape))
g = out.guidance
print("explorer picks objects", g.selected_ins[0].tolist(), "verbs", g.selected_int[0].tolist())
print("padded context queries", g.context_query_padding.tolist())
print("aggregator fused      ", tuple(out.aggregated.fused.shape), "= [z_ins | z_c | z_vlm]")

# Turning the context branch off feeds zeros into the aggregator's context stream.
plain = ContextHOI(ModelConfig(), SwitchConfig(context_branch=False), objects, verbs, pairs).eval()
with torch.no_grad():
    print("without context branch: context boxes =", plain(torch.rand(1, 3, 64, 64)).context_boxes)
