"""Command-line entry point: train, eval, generate-synthetic, visualize, report."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("contexthoi")


def _load_data(root: str):
    from .data import load_dataset

    return load_dataset(root)


def cmd_train(args) -> int:
    from .config import RunConfig
    from .engine import TrainingAborted, train

    cfg = RunConfig.load(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if not cfg.data.root:
        raise SystemExit("config has no data.root")
    data = _load_data(cfg.data.root)
    eval_data = None
    if cfg.data.eval_root:
        eval_data = _load_data(cfg.data.eval_root).with_train_counts(data.train_counts)
    try:
        result = train(cfg, data, eval_data, resume=args.resume)
    except TrainingAborted as exc:
        log.error("%s", exc)
        return 2
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from .engine import evaluate, load_checkpoint, predict
    from .evaluation import read_subset, write_detections, write_report

    model, cfg, categories, _ = load_checkpoint(args.checkpoint)
    data = _load_data(args.data)
    if data.hoi_pairs != categories.hoi_pairs:
        raise SystemExit("dataset category table differs from the checkpoint's")
    if args.train_counts_from_checkpoint:
        data = data.with_train_counts(categories.train_counts)
    subset = read_subset(args.subset, [im.id for im in data.images]) if args.subset else None
    result = evaluate(model, data, cfg, subset)
    out = Path(args.out or Path(args.checkpoint).parent / "eval")
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.json", result, data.meta())
    evaluated = data.restrict(subset) if subset is not None else data
    write_detections(out / "detections.txt",
                     predict(model, evaluated, cfg.data.image_size, cfg.eval.top_k))
    fmt = lambda v: "nan" if math.isnan(v) else f"{100 * v:.2f}"  # noqa: E731
    print(f"full {fmt(result['full'])}  rare {fmt(result['rare'])}  non_rare {fmt(result['non_rare'])}"
          f"  ({result['num_images']} images)")
    print(f"report: {out / 'report.json'}")
    return 0


def cmd_generate(args) -> int:
    from .synthetic import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec.load(args.spec) if args.spec else SyntheticSpec()
    index = generate_synthetic(spec, args.out)
    print(f"{len(index.images)} images, {index.num_annotations} annotations -> {args.out}")
    return 0


def cmd_visualize(args) -> int:
    from .engine import forward_single, load_checkpoint
    from .visualize import render

    model, cfg, categories, _ = load_checkpoint(args.checkpoint)
    root = args.data or cfg.data.root
    if not root:
        raise ValueError("checkpoint config has no data.root; pass --data")
    data = _load_data(root)
    record = data.image(args.image)
    out = forward_single(model, data, record.id, cfg.data.image_size)
    pixels = data.load_pixels(record, cfg.data.image_size).permute(1, 2, 0).numpy()
    result = render(np.clip(pixels, 0, 1), out, args.out)
    for path in result["files"]:
        print(path)
    return 0


def cmd_report(args) -> int:
    from .engine import read_metrics
    from .visualize import plot_metrics

    records = read_metrics(args.metrics)
    paths = plot_metrics(records, args.out)
    summary = {}
    for r in records:
        summary.update({k: v for k, v in r.items() if k not in ("epoch",)})
    Path(args.out, "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{len(paths)} plots -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contexthoi", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a YAML run config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--output-dir", help="override output_dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="mAP of a checkpoint on a dataset root")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--subset", help="file with one image id per line")
    e.add_argument("--out", help="report directory (default: next to the checkpoint)")
    e.add_argument("--train-counts-from-checkpoint", action="store_true",
                   help="take rare/non-rare flags from the training split in the checkpoint")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("generate-synthetic", help="render a synthetic dataset")
    g.add_argument("--spec", help="YAML synthetic spec (defaults if omitted)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("visualize", help="attention heatmaps for one image")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--image", required=True, help="image id")
    v.add_argument("--data", help="dataset root holding the image (default: the training root)")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_visualize)

    r = sub.add_parser("report", help="plots from a metrics stream")
    r.add_argument("--metrics", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
