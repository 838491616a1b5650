"""Procedural "context determines the verb" scenes for desk-scale experiments.

Every scene holds one human marker (a red block), one object marker (a block
whose colour encodes the object class) and a striped/checked background whose
pattern is the texture class. With ``task="context"`` the verb *is* the
texture class and is drawn independently of the foreground; with
``task="foreground"`` the verb is the side of the human the object sits on and
the texture is random.

Difficulty flags degrade the foreground only: ``occluded`` paints a grey
occluder over at least 60% of the human marker, ``blurred`` blurs the
foreground region, ``tiny`` shrinks both markers.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from scipy.ndimage import gaussian_filter

from .data import Annotation, DatasetIndex, ImageRecord
from .evaluation import write_subset

TEXTURES = ("horizontal", "vertical", "checker", "diagonal", "antidiagonal", "dots")
OBJECT_COLOURS = ((0.1, 0.3, 1.0), (0.1, 0.9, 0.2), (1.0, 0.9, 0.1), (0.9, 0.1, 0.9), (0.1, 0.9, 0.9))
HUMAN_COLOUR = (0.95, 0.1, 0.1)
DIFFICULTIES = ("clear", "occluded", "blurred", "tiny")
MIN_OCCLUSION = 0.6


@dataclass
class SyntheticSpec:
    num_images: int = 20
    image_size: int = 64
    num_objects: int = 3
    num_verbs: int = 4
    task: str = "context"  # context | foreground
    difficulty: dict = field(default_factory=lambda: {"clear": 1.0})
    object_probs: Optional[list] = None
    seed: int = 0
    id_prefix: str = "syn"

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SyntheticSpec":
        return cls(**(yaml.safe_load(Path(path).read_text()) or {}))

    def dumps(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=False)


def texture(kind: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Two-tone pattern of the given texture class; colours are random and class-free."""
    period = int(rng.choice([4, 6, 8]))
    phase = int(rng.integers(0, period * 2))
    y, x = np.mgrid[0:size, 0:size]
    name = TEXTURES[kind]
    if name == "horizontal":
        mask = ((y + phase) // period) % 2
    elif name == "vertical":
        mask = ((x + phase) // period) % 2
    elif name == "checker":
        mask = (((x + phase) // period) + ((y + phase) // period)) % 2
    elif name == "diagonal":
        mask = ((x + y + phase) // period) % 2
    elif name == "antidiagonal":
        mask = ((x - y + phase + 4 * size) // period) % 2
    else:
        mask = (((x + phase) % period) < period // 2) & (((y + phase) % period) < period // 2)
    grey = rng.uniform(0.3, 0.7, size=2)
    tint = rng.uniform(-0.05, 0.05, size=(2, 3))
    c0, c1 = grey[0] + tint[0], grey[1] + tint[1]
    if abs(grey[0] - grey[1]) < 0.15:  # keep the pattern visible
        c1 = c1 + np.sign(grey[1] - grey[0] + 1e-9) * 0.15
    img = np.where(mask[..., None].astype(bool), c1, c0)
    return np.clip(img + rng.normal(0, 0.02, img.shape), 0, 1)


def _place(rng, size, hw, hh, ow, oh, side):
    """Integer corner boxes for the human and an adjacent object on ``side``."""
    gap = int(rng.integers(0, 3))
    for _ in range(100):
        hx = int(rng.integers(1, size - hw - 1))
        hy = int(rng.integers(1, size - hh - 1))
        if side == 0:  # object right of human
            ox, oy = hx + hw + gap, hy + int(rng.integers(0, max(1, hh - oh + 1)))
        elif side == 1:  # left
            ox, oy = hx - gap - ow, hy + int(rng.integers(0, max(1, hh - oh + 1)))
        elif side == 2:  # above
            ox, oy = hx + int(rng.integers(-ow // 2, max(1, hw - ow // 2))), hy - gap - oh
        else:  # below
            ox, oy = hx + int(rng.integers(-ow // 2, max(1, hw - ow // 2))), hy + hh + gap
        if 0 <= ox and ox + ow <= size and 0 <= oy and oy + oh <= size:
            return (hx, hy, hx + hw, hy + hh), (ox, oy, ox + ow, oy + oh)
    raise RuntimeError("could not place markers")  # pragma: no cover


def render_scene(rng: np.random.Generator, size: int, tex: int, obj: int, side: int,
                 difficulty: str):
    """Returns (uint8 image, human box px, object box px, occluded fraction)."""
    img = texture(tex, size, rng)
    scale = size / 64
    if difficulty == "tiny":
        hw, hh = int(rng.integers(4, 7) * scale), int(rng.integers(6, 10) * scale)
        ow, oh = int(rng.integers(4, 7) * scale), int(rng.integers(4, 7) * scale)
    else:
        hw, hh = int(rng.integers(8, 15) * scale), int(rng.integers(16, 27) * scale)
        ow, oh = int(rng.integers(8, 15) * scale), int(rng.integers(8, 15) * scale)
    hbox, obox = _place(rng, size, hw, hh, ow, oh, side)
    img[hbox[1]:hbox[3], hbox[0]:hbox[2]] = HUMAN_COLOUR
    img[obox[1]:obox[3], obox[0]:obox[2]] = OBJECT_COLOURS[obj]
    occluded = 0.0
    if difficulty == "occluded":
        frac = rng.uniform(MIN_OCCLUSION, 0.9)
        cover = int(np.ceil(frac * hh))
        top = bool(rng.integers(0, 2))
        y0, y1 = (hbox[1], hbox[1] + cover) if top else (hbox[3] - cover, hbox[3])
        x0, x1 = max(0, hbox[0] - 1), min(size, hbox[2] + 1)
        img[y0:y1, x0:x1] = rng.uniform(0.45, 0.55)
        occluded = cover * hw / (hw * hh)
    elif difficulty == "blurred":
        x0, y0 = min(hbox[0], obox[0]), min(hbox[1], obox[1])
        x1, y1 = max(hbox[2], obox[2]), max(hbox[3], obox[3])
        pad = 3
        sl = (slice(max(0, y0 - pad), y1 + pad), slice(max(0, x0 - pad), x1 + pad))
        img[sl] = gaussian_filter(img[sl], sigma=(2.0, 2.0, 0))
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8), hbox, obox, occluded


def generate_synthetic(spec: SyntheticSpec, out_dir: Optional[str | os.PathLike] = None) -> DatasetIndex:
    """Deterministic synthetic dataset; optionally written to ``out_dir``.

    Writes ``categories.json``, ``annotations.jsonl``, ``images/*.png`` and
    ``ambiguous.txt`` (ids of every non-clear scene) when ``out_dir`` is given.
    """
    if spec.task not in ("context", "foreground"):
        raise ValueError(f"unknown task {spec.task!r}")
    if spec.num_verbs > (len(TEXTURES) if spec.task == "context" else 4):
        raise ValueError(f"too many verbs for task {spec.task!r}")
    if spec.num_objects > len(OBJECT_COLOURS):
        raise ValueError("too many object classes")
    unknown = set(spec.difficulty) - set(DIFFICULTIES)
    if unknown:
        raise ValueError(f"unknown difficulty flags {sorted(unknown)}")
    rng = np.random.default_rng(spec.seed)
    n, size = spec.num_images, spec.image_size

    names, probs = list(spec.difficulty), np.array(list(spec.difficulty.values()), dtype=float)
    difficulty = [names[i] for i in rng.choice(len(names), size=n, p=probs / probs.sum())]
    # balanced verb marginal: each verb appears floor/ceil(n / num_verbs) times
    verbs = rng.permutation(np.arange(n) % spec.num_verbs)
    op = None if spec.object_probs is None else np.asarray(spec.object_probs, float)
    objects = rng.choice(spec.num_objects, size=n, p=None if op is None else op / op.sum())

    object_names = [f"object{i}" for i in range(spec.num_objects)]
    if spec.task == "context":
        verb_names = [f"{TEXTURES[v]}" for v in range(spec.num_verbs)]
    else:
        verb_names = ["right_of", "left_of", "above", "below"][:spec.num_verbs]
    hoi_pairs = [(o, v) for o in range(spec.num_objects) for v in range(spec.num_verbs)]

    images, pixels = [], {}
    for i in range(n):
        v, o = int(verbs[i]), int(objects[i])
        if spec.task == "context":
            tex, side = v, int(rng.integers(0, 4))
        else:
            tex, side = int(rng.integers(0, len(TEXTURES))), v
        arr, hb, ob, _ = render_scene(rng, size, tex, o, side, difficulty[i])
        image_id = f"{spec.id_prefix}{spec.seed}_{i:05d}"
        ann = Annotation(tuple(c / size for c in hb), tuple(c / size for c in ob), o, v)
        images.append(ImageRecord(image_id, f"images/{image_id}.png", size, size, [ann], difficulty[i]))
        pixels[image_id] = arr

    index = DatasetIndex(object_names, verb_names, hoi_pairs, [0] * len(hoi_pairs), images,
                         Path(out_dir) if out_dir else None, pixels)
    index.train_counts = index.count_hois()
    if out_dir is not None:
        index.save(out_dir)
        write_subset(Path(out_dir) / "ambiguous.txt",
                     [im.id for im in images if im.difficulty != "clear"])
    return index


def make_splits(spec: SyntheticSpec, num_test: int, test_difficulty: Optional[dict] = None):
    """Train and test indices from disjoint seeds; test rare flags follow the train counts."""
    train = generate_synthetic(spec)
    test_spec = SyntheticSpec(**{**asdict(spec), "num_images": num_test, "seed": spec.seed + 10_000,
                                 "id_prefix": spec.id_prefix + "test",
                                 "difficulty": test_difficulty or spec.difficulty})
    test = generate_synthetic(test_spec).with_train_counts(train.train_counts)
    return train, test
