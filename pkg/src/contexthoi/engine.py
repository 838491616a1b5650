"""Training loop, checkpointing, inference and evaluation."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .config import RunConfig
from .data import DatasetIndex, ImageRecord
from .evaluation import CategoryMeta, DetectionRecord, compute_map, score_predictions
from .matching import NonFiniteLossError, SetCriterion, Target
from .model import ContextHOI, ModelOutput

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingAborted(RuntimeError):
    """Raised when a step produces a non-finite loss. ``checkpoint`` is the last good one."""

    def __init__(self, message: str, checkpoint: Optional[Path]):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    model: ContextHOI
    metrics_path: Path
    checkpoint_path: Optional[Path]
    history: list[dict] = field(default_factory=list)

    def scalars(self, key: str) -> list[float]:
        return [r[key] for r in self.history if key in r]


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def build_model(cfg: RunConfig, data: DatasetIndex) -> ContextHOI:
    """Seeded model for the dataset's category tables."""
    torch.manual_seed(cfg.seed)
    return ContextHOI(cfg.model, cfg.switches, data.objects, data.verbs, data.hoi_pairs)


def collate(data: DatasetIndex, records: Sequence[ImageRecord], size: int):
    images = torch.stack([data.load_pixels(r, size) for r in records])
    return images, [data.target(r) for r in records]


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Image order for one epoch; a pure function of (seed, epoch) so resumes replay it."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def _optimizer(model, cfg: RunConfig):
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.optim.lr_drop_epoch,
                                            gamma=cfg.optim.lr_drop_factor)
    return opt, sched


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(path: str | os.PathLike, model: ContextHOI, cfg: RunConfig, data: DatasetIndex,
                    optimizer=None, scheduler=None, epoch: int = 0, step: int = 0,
                    generator: Optional[torch.Generator] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "categories": {"objects": list(data.objects), "verbs": list(data.verbs),
                       "hoi_pairs": [list(p) for p in data.hoi_pairs],
                       "train_counts": list(data.train_counts)},
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "epoch": epoch,
        "step": step,
        "torch_rng": torch.get_rng_state(),
        "gumbel_rng": generator.get_state() if generator is not None else None,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(state, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike):
    """Returns (model, config, category DatasetIndex stub, raw state)."""
    state = torch.load(path, map_location="cpu", weights_only=False)
    if state.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {state.get('version')!r}")
    cfg = RunConfig.from_dict(state["config"])
    cats = state["categories"]
    categories = DatasetIndex(cats["objects"], cats["verbs"], [tuple(p) for p in cats["hoi_pairs"]],
                              cats["train_counts"], [])
    model = ContextHOI(cfg.model, cfg.switches, categories.objects, categories.verbs,
                       categories.hoi_pairs)
    own = model.state_dict()
    missing = sorted(set(own) - set(state["model"]))
    unexpected = sorted(set(state["model"]) - set(own))
    wrong = [k for k in own if k in state["model"] and own[k].shape != state["model"][k].shape]
    if missing or unexpected or wrong:
        raise ValueError(f"{path}: checkpoint does not fit the model "
                         f"(missing {missing[:3]}, unexpected {unexpected[:3]}, shape mismatch {wrong[:3]})")
    model.load_state_dict(state["model"])
    model.eval()
    return model, cfg, categories, state


# --- metrics stream -----------------------------------------------------------

class MetricsWriter:
    """Append-only JSONL stream: one record per line with ``step`` and named scalars."""

    def __init__(self, path: Path, resume_step: Optional[int] = None):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        if resume_step is None:
            path.write_text("")
        elif path.exists():
            # drop records written after the checkpoint we resume from
            keep = [line for line in path.read_text().splitlines()
                    if line.strip() and json.loads(line)["step"] <= resume_step]
            path.write_text("".join(line + "\n" for line in keep))

    def write(self, record: dict) -> None:
        with self.path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics(path: str | os.PathLike) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# --- training -----------------------------------------------------------------

def train_step(model: ContextHOI, criterion: SetCriterion, optimizer, images: torch.Tensor,
               targets: Sequence[Target], generator: Optional[torch.Generator],
               grad_clip: float) -> dict[str, float]:
    model.train()
    out = model(images, generator)
    aux = model.auxiliary_predictions(out) if criterion.cfg.aux_loss else None
    parts = criterion(out, targets, model.tau(), aux=aux)
    optimizer.zero_grad(set_to_none=True)
    parts["loss"].backward()
    if grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return {k: float(v.detach()) for k, v in parts.items()}


def train(cfg: RunConfig, data: DatasetIndex, eval_data: Optional[DatasetIndex] = None,
          resume: Optional[str | os.PathLike] = None,
          on_epoch: Optional[Callable[[int, ContextHOI], None]] = None) -> TrainResult:
    """End-to-end training with a JSONL metrics stream and resumable checkpoints.

    Files written under ``cfg.output_dir``: ``metrics.jsonl``, ``config.yaml``,
    ``checkpoint_last.pt`` (every ``checkpoint_every`` epochs and at the end)
    and ``checkpoint_epoch{N}.pt`` for each cadence save.
    """
    if not data.images:
        raise ValueError("training set is empty")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.yaml")

    model = build_model(cfg, data)
    criterion = SetCriterion(cfg.model, cfg.switches, cfg.loss)
    optimizer, scheduler = _optimizer(model, cfg)
    generator = torch.Generator().manual_seed(cfg.seed)
    seed_everything(cfg.seed)
    start_epoch, step = 0, 0
    last_ckpt: Optional[Path] = None
    if resume is not None:
        _, _, _, state = load_checkpoint(resume)
        model.load_state_dict(state["model"])
        optimizer.load_state_dict(state["optimizer"])
        scheduler.load_state_dict(state["scheduler"])
        torch.set_rng_state(state["torch_rng"])
        if state["gumbel_rng"] is not None:
            generator.set_state(state["gumbel_rng"])
        start_epoch, step, last_ckpt = state["epoch"], state["step"], Path(resume)
    metrics = MetricsWriter(out_dir / "metrics.jsonl", step if resume is not None else None)
    history: list[dict] = []

    n, bs = len(data.images), cfg.optim.batch_size
    for epoch in range(start_epoch, cfg.optim.epochs):
        order = epoch_order(cfg.seed, epoch, n)
        lr = optimizer.param_groups[0]["lr"]
        for start in range(0, n, bs):
            batch = [data.images[i] for i in order[start:start + bs]]
            images, targets = collate(data, batch, cfg.data.image_size)
            try:
                scalars = train_step(model, criterion, optimizer, images, targets, generator,
                                     cfg.optim.grad_clip)
            except NonFiniteLossError as exc:
                where = f"last good checkpoint: {last_ckpt}" if last_ckpt else "no checkpoint written yet"
                raise TrainingAborted(f"step {step}: {exc}; {where}", last_ckpt) from exc
            step += 1
            record = {"step": step, "epoch": epoch, "lr": lr, **scalars}
            metrics.write(record)
            history.append(record)
        scheduler.step()
        done = epoch + 1
        if eval_data is not None and cfg.eval.every_epochs and done % cfg.eval.every_epochs == 0:
            result = evaluate(model, eval_data, cfg)
            record = {"step": step, "epoch": epoch, **{f"eval_{k}": _nan_to_none(result[k])
                                                        for k in ("full", "rare", "non_rare")}}
            metrics.write(record)
            history.append(record)
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_epoch{done}.pt", model, cfg, data, optimizer,
                            scheduler, done, step, generator)
            last_ckpt = save_checkpoint(out_dir / "checkpoint_last.pt", model, cfg, data, optimizer,
                                        scheduler, done, step, generator)
        if on_epoch is not None:
            on_epoch(epoch, model)
    last_ckpt = save_checkpoint(out_dir / "checkpoint_last.pt", model, cfg, data, optimizer, scheduler,
                                max(cfg.optim.epochs, start_epoch), step, generator)
    model.eval()
    return TrainResult(model, out_dir / "metrics.jsonl", last_ckpt, history)


def _nan_to_none(v):
    return None if isinstance(v, float) and math.isnan(v) else v


# --- inference ------------------------------------------------------------------

@torch.no_grad()
def predict_outputs(model: ContextHOI, data: DatasetIndex, size: int, batch_size: int = 16):
    """Yields (records, ModelOutput) per batch, model in eval mode."""
    model.eval()
    for start in range(0, len(data.images), batch_size):
        records = data.images[start:start + batch_size]
        images = torch.stack([data.load_pixels(r, size) for r in records])
        yield records, model(images)


def predict(model: ContextHOI, data: DatasetIndex, size: int, top_k: int = 100,
            batch_size: int = 16) -> list[DetectionRecord]:
    dets = []
    for records, out in predict_outputs(model, data, size, batch_size):
        dets.extend(score_predictions(out.human_boxes, out.object_boxes, out.object_logits,
                                      out.hoi_logits, [r.id for r in records],
                                      model.hoi_object.tolist(), top_k))
    return dets


def evaluate(model: ContextHOI, data: DatasetIndex, cfg: RunConfig,
             subset: Optional[Sequence[str]] = None, meta: Optional[CategoryMeta] = None) -> dict:
    """Default-protocol mAP of ``model`` on ``data`` (optionally an id subset)."""
    evaluated = data.restrict(subset) if subset is not None else data
    dets = predict(model, evaluated, cfg.data.image_size, cfg.eval.top_k)
    return compute_map(dets, data.ground_truth_records(), meta or data.meta(),
                       cfg.eval.iou_threshold, subset, cfg.eval.ap_mode)


def verb_accuracy(model: ContextHOI, data: DatasetIndex, size: int) -> float:
    """Fraction of images whose highest-scoring verb matches the annotated verb.

    The score of verb v is the largest interaction probability over queries
    and HOI categories with that verb, independent of box quality. Images must
    carry a single annotated verb.
    """
    hoi_verb = model.hoi_verb
    correct = total = 0
    for records, out in predict_outputs(model, data, size):
        prob = out.hoi_logits.sigmoid().amax(1)  # [B, N_hoi]
        per_verb = torch.full((prob.shape[0], model.num_verbs), -1.0)
        per_verb = per_verb.scatter_reduce(1, hoi_verb.expand(prob.shape[0], -1), prob, "amax")
        pred = per_verb.argmax(-1)
        for r, p in zip(records, pred.tolist()):
            verbs = {a.verb for a in r.annotations}
            if len(verbs) != 1:
                raise ValueError(f"image {r.id!r} does not have exactly one verb")
            correct += int(p in verbs)
            total += 1
    return correct / total


def forward_single(model: ContextHOI, data: DatasetIndex, image_id: str, size: int) -> ModelOutput:
    record = data.image(image_id)
    model.eval()
    with torch.no_grad():
        return model(data.load_pixels(record, size)[None])
