"""Desk-scale experiments on synthetic scenes.

Each function trains fresh models and returns plain numbers; thresholds are
left to the caller. Sizes are tuned for a single CPU core.
"""
from __future__ import annotations

import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import RunConfig, ablation_config
from .engine import evaluate, train, verb_accuracy
from .synthetic import SyntheticSpec, generate_synthetic, make_splits

MIXED = {"clear": 0.5, "occluded": 0.2, "blurred": 0.15, "tiny": 0.15}
ABLATION_ROWS = ("instance_only", "context", "full")
CHANCE = 0.25  # four verbs


@dataclass
class ExperimentSize:
    num_train: int
    num_test: int
    epochs: int
    batch_size: int


OVERFIT = ExperimentSize(20, 0, 300, 4)
CONTEXT = ExperimentSize(400, 100, 40, 8)
ABLATION = ExperimentSize(300, 100, 80, 4)


def _out_dir(root: Optional[str | os.PathLike], name: str) -> str:
    if root is None:
        root = tempfile.mkdtemp(prefix="contexthoi-")
    return str(Path(root) / name)


def _sized(cfg: RunConfig, size: ExperimentSize, seed: int, out: str) -> RunConfig:
    cfg.seed = seed
    cfg.output_dir = out
    cfg.optim.epochs = size.epochs
    # learning-rate drop at two thirds of training, as in both profiles
    cfg.optim.lr_drop_epoch = max(1, round(2 * size.epochs / 3))
    cfg.optim.batch_size = size.batch_size
    return cfg


def overfit(seed: int = 0, size: ExperimentSize = OVERFIT, out_root=None) -> dict:
    """Train the full desk model on a handful of clear scenes and score it on the same scenes."""
    data = generate_synthetic(SyntheticSpec(num_images=size.num_train, seed=seed))
    cfg = _sized(RunConfig.from_profile("desk"), size, seed, _out_dir(out_root, f"overfit_{seed}"))
    start = time.perf_counter()
    result = train(cfg, data)
    elapsed = time.perf_counter() - start
    hoi = result.scalars("loss_hoi")
    steps_per_epoch = -(-size.num_train // size.batch_size)
    return {
        "map": evaluate(result.model, data, cfg)["full"],
        "loss_hoi_initial": hoi[0],
        "loss_hoi_final": sum(hoi[-steps_per_epoch:]) / steps_per_epoch,
        "seconds": elapsed,
    }


def context_matters(seed: int, size: ExperimentSize = CONTEXT, out_root=None) -> dict:
    """Verb accuracy on fully occluded scenes for the full model and the instance-only row."""
    spec = SyntheticSpec(num_images=size.num_train, seed=seed, difficulty={"occluded": 1.0})
    train_data, test_data = make_splits(spec, size.num_test)
    accs = {}
    for name in ("full", "instance_only"):
        cfg = _sized(ablation_config(name), size, seed, _out_dir(out_root, f"context_{name}_{seed}"))
        model = train(cfg, train_data).model
        accs[name] = verb_accuracy(model, test_data, cfg.data.image_size)
    return {"full": accs["full"], "instance_only": accs["instance_only"]}


def ablation(seed: int, rows=ABLATION_ROWS, size: ExperimentSize = ABLATION, out_root=None) -> dict:
    """Test full mAP of each ablation row on the mixed-difficulty task."""
    spec = SyntheticSpec(num_images=size.num_train, seed=seed, difficulty=MIXED)
    train_data, test_data = make_splits(spec, size.num_test)
    scores = {}
    for name in rows:
        cfg = _sized(ablation_config(name), size, seed, _out_dir(out_root, f"ablation_{name}_{seed}"))
        model = train(cfg, train_data).model
        scores[name] = evaluate(model, test_data, cfg)["full"]
    return scores
