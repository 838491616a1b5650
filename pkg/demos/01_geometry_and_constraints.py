"""Box geometry and the three spatial constraint losses on hand-sized inputs.

Run: python3 demos/01_geometry_and_constraints.py
"""
import torch

from contexthoi.constraints import (feature_constraint, instance_constraint, region_constraint,
                                    spatial_constraint_total)
from contexthoi.geometry import (box_cxcywh_to_xyxy, box_iou, box_xyxy_to_cxcywh,
                                 dynamic_distance_weight, generalized_box_iou)

D = torch.float64
a = torch.tensor([0, 0, 2, 2], dtype=D)
b = torch.tensor([1, 1, 3, 3], dtype=D)
print(f"IoU  {box_iou(a, b).item():.6f}   (1/7  = {1 / 7:.6f})")
print(f"GIoU {generalized_box_iou(a, b).item():.6f}  (-5/63 = {-5 / 63:.6f})")

# The distance weight is 1 for coincident boxes and fades as boxes separate.
h = box_xyxy_to_cxcywh(torch.tensor([0.2, 0.2, 0.5, 0.8], dtype=D))
for shift in (0.0, 0.1, 0.3, 0.6):
    c = h + torch.tensor([shift, 0, 0, 0], dtype=D)
    print(f"context box shifted by {shift:.1f}: W_d = {dynamic_distance_weight(c, h, 0.5).item():.4f}")

# Feature constraint: mean |cosine| between paired decoder stacks.
ins = torch.randn(4, 2, 16, dtype=D)
print("L_FC identical stacks:", feature_constraint(ins, ins).item())
print("L_FC independent stacks:", round(feature_constraint(ins, torch.randn(4, 2, 16, dtype=D)).item(), 4))

# Region constraint: exp(-L1) between guided embeddings.
print("L_RC identical:", region_constraint(ins[:, 0], ins[:, 0]).item())

# Instance constraint: largest when the context box overlaps the human and object boxes.
# The distance weight keeps far-away boxes from scoring as well as ones near the pair.
o = box_xyxy_to_cxcywh(torch.tensor([0.55, 0.4, 0.8, 0.6], dtype=D))
for name, ctx in (("on the human", h), ("nearby", box_xyxy_to_cxcywh(torch.tensor([0.5, 0.6, 0.7, 0.9], dtype=D))),
                  ("far away", box_xyxy_to_cxcywh(torch.tensor([0.0, 0.9, 0.05, 0.95], dtype=D)))):
    print(f"L_IC context {name:13s}: {instance_constraint(ctx[None], h, o, 0.5).item():.4f}")

# Descent on L_IC alone: the context box leaves the human box but does not run away.
params = torch.cat([h[:2] + 0.02, h[2:].log()]).clone().requires_grad_(True)
opt = torch.optim.SGD([params], lr=0.05)
for step in range(51):
    box = torch.cat([params[:2], params[2:].exp()])
    loss = instance_constraint(box[None], h, o, 0.5)
    if step % 10 == 0:
        g = generalized_box_iou(box_cxcywh_to_xyxy(h), box_cxcywh_to_xyxy(box)).item()
        print(f"step {step:2d}  L_IC {loss.item():.4f}  GIoU(context, human) {g:+.4f}")
    opt.zero_grad()
    loss.backward()
    opt.step()

print("L_SC with default weights 4/1/4:", spatial_constraint_total(0.5, 0.2, 1.0))
