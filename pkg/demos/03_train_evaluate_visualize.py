"""Train on a few synthetic scenes, score mAP (full and on a subset), draw attention maps.

Run: python3 demos/03_train_evaluate_visualize.py [output_dir]
Takes about two minutes on one core.
"""
import sys
from pathlib import Path

import numpy as np

from contexthoi.config import RunConfig
from contexthoi.engine import evaluate, forward_single, train
from contexthoi.evaluation import read_subset
from contexthoi.synthetic import SyntheticSpec, generate_synthetic
from contexthoi.visualize import plot_metrics, render

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
spec = SyntheticSpec(num_images=20, seed=0, difficulty={"clear": 0.7, "occluded": 0.3})
data = generate_synthetic(spec, out / "data")
print(f"{len(data.images)} scenes written to {out / 'data'}")

cfg = RunConfig.from_profile("desk")
cfg.output_dir = str(out / "run")
cfg.optim.epochs = 300
result = train(cfg, data)
hoi = result.scalars("loss_hoi")
print(f"L_HOI {hoi[0]:.2f} -> {hoi[-1]:.3f} over {len(hoi)} steps")

full = evaluate(result.model, data, cfg)
print(f"mAP full {full['full']:.3f}  rare {full['rare']:.3f}  non-rare {full['non_rare']:.3f}")
subset = read_subset(out / "data" / "ambiguous.txt", [im.id for im in data.images])
occluded = evaluate(result.model, data, cfg, subset=subset)
print(f"mAP on the {len(subset)} occluded scenes: {occluded['full']:.3f}")

record = data.images[0]
pred = forward_single(result.model, data, record.id, cfg.data.image_size)
pixels = data.load_pixels(record, cfg.data.image_size).permute(1, 2, 0).numpy()
vis = render(np.clip(pixels, 0, 1), pred, out / "heatmaps")
print("heatmaps:", *[p.name for p in vis["files"]])
print("metric plots:", len(plot_metrics(result.history, out / "plots")))
