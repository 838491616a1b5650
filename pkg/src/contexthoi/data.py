"""Dataset index, annotation schema and loading.

On-disk layout of a dataset root::

    categories.json    {"objects": [...], "verbs": [...],
                        "hois": [{"object": o, "verb": v, "train_count": n}, ...]}
    annotations.jsonl  one image per line:
                       {"id": "...", "file": "images/x.png", "width": W, "height": H,
                        "difficulty": "clear",
                        "hois": [{"human": [x0, y0, x1, y1], "object": [x0, y0, x1, y1],
                                  "object_class": o, "verb": v}, ...]}
    ambiguous.txt      optional subset file, one image id per line

Boxes are corner form, normalized to [0, 1]; all category ids are 0-based.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from PIL import Image

from .evaluation import CategoryMeta, GroundTruthRecord
from .matching import Target


class AnnotationError(ValueError):
    pass


@dataclass
class Annotation:
    human_box: tuple  # x0, y0, x1, y1
    object_box: tuple
    object_class: int
    verb: int


@dataclass
class ImageRecord:
    id: str
    file: str
    width: int
    height: int
    annotations: list[Annotation] = field(default_factory=list)
    difficulty: str = "clear"


@dataclass
class DatasetIndex:
    objects: list[str]
    verbs: list[str]
    hoi_pairs: list[tuple[int, int]]
    train_counts: list[int]
    images: list[ImageRecord]
    root: Optional[Path] = None
    pixels: dict = field(default_factory=dict, repr=False)  # id -> uint8 [H, W, 3]

    def __post_init__(self):
        self._hoi_id = {p: i for i, p in enumerate(self.hoi_pairs)}
        self._by_id = {im.id: im for im in self.images}

    @property
    def num_annotations(self) -> int:
        return sum(len(im.annotations) for im in self.images)

    def hoi_id(self, object_class: int, verb: int) -> int:
        return self._hoi_id[(object_class, verb)]

    def image(self, image_id: str) -> ImageRecord:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise KeyError(f"unknown image id {image_id!r}") from None

    def meta(self) -> CategoryMeta:
        return CategoryMeta(list(self.hoi_pairs), list(self.train_counts))

    def subset_ids(self, difficulty: Optional[Iterable[str]] = None) -> list[str]:
        if difficulty is None:
            return [im.id for im in self.images]
        wanted = set(difficulty)
        return [im.id for im in self.images if im.difficulty in wanted]

    def load_pixels(self, record: ImageRecord, size: Optional[int] = None) -> torch.Tensor:
        """Image as float [3, H, W] in [0, 1], optionally resized to ``size`` x ``size``."""
        arr = self.pixels.get(record.id)
        if arr is None:
            if self.root is None:
                raise FileNotFoundError(f"no pixels for image {record.id!r}")
            img = Image.open(self.root / record.file).convert("RGB")
            if size is not None and img.size != (size, size):
                img = img.resize((size, size), Image.BILINEAR)
            arr = np.asarray(img)
        elif size is not None and arr.shape[:2] != (size, size):
            arr = np.asarray(Image.fromarray(arr).resize((size, size), Image.BILINEAR))
        return torch.from_numpy(np.array(arr)).permute(2, 0, 1).float() / 255.0

    def target(self, record: ImageRecord, dtype=torch.float32) -> Target:
        """Group annotations sharing both boxes into one multi-hot ground-truth pair."""
        pairs: dict = {}
        for a in record.annotations:
            key = (a.human_box, a.object_box, a.object_class)
            pairs.setdefault(key, set()).add(self.hoi_id(a.object_class, a.verb))
        n = len(self.hoi_pairs)
        hb, ob, labels, multi = [], [], [], []
        for (h, o, c), hois in pairs.items():
            hb.append(_xyxy_to_cxcywh(h))
            ob.append(_xyxy_to_cxcywh(o))
            labels.append(c)
            row = [0.0] * n
            for i in hois:
                row[i] = 1.0
            multi.append(row)
        return Target(
            human_boxes=torch.tensor(hb, dtype=dtype).reshape(-1, 4),
            object_boxes=torch.tensor(ob, dtype=dtype).reshape(-1, 4),
            object_labels=torch.tensor(labels, dtype=torch.long),
            hoi_labels=torch.tensor(multi, dtype=dtype).reshape(-1, n),
        )

    def ground_truth_records(self) -> list[GroundTruthRecord]:
        out = []
        for im in self.images:
            for a in im.annotations:
                out.append(GroundTruthRecord(im.id, self.hoi_id(a.object_class, a.verb),
                                             tuple(a.human_box), tuple(a.object_box)))
        return out

    def with_train_counts(self, counts: Sequence[int]) -> "DatasetIndex":
        """Same images, rare/non-rare flags taken from another (training) split."""
        return DatasetIndex(self.objects, self.verbs, self.hoi_pairs, list(counts), self.images,
                            self.root, self.pixels)

    def restrict(self, image_ids: Iterable[str]) -> "DatasetIndex":
        keep = set(image_ids)
        return DatasetIndex(self.objects, self.verbs, self.hoi_pairs, self.train_counts,
                            [im for im in self.images if im.id in keep], self.root, self.pixels)

    def count_hois(self) -> list[int]:
        counts = [0] * len(self.hoi_pairs)
        for im in self.images:
            for a in im.annotations:
                counts[self.hoi_id(a.object_class, a.verb)] += 1
        return counts

    # --- serialization ---------------------------------------------------

    def save(self, root: str | os.PathLike, write_images: bool = True) -> None:
        root = Path(root)
        (root / "images").mkdir(parents=True, exist_ok=True)
        cats = {
            "objects": self.objects,
            "verbs": self.verbs,
            "hois": [{"object": o, "verb": v, "train_count": c}
                     for (o, v), c in zip(self.hoi_pairs, self.train_counts)],
        }
        (root / "categories.json").write_text(json.dumps(cats, indent=1) + "\n")
        lines = []
        for im in self.images:
            rec = {"id": im.id, "file": im.file, "width": im.width, "height": im.height,
                   "difficulty": im.difficulty,
                   "hois": [{"human": list(a.human_box), "object": list(a.object_box),
                             "object_class": a.object_class, "verb": a.verb}
                            for a in im.annotations]}
            lines.append(json.dumps(rec, sort_keys=True))
            if write_images and im.id in self.pixels:
                Image.fromarray(self.pixels[im.id]).save(root / im.file, format="PNG")
        (root / "annotations.jsonl").write_text("\n".join(lines) + "\n")


def _xyxy_to_cxcywh(b):
    x0, y0, x1, y1 = b
    return [(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0]


def _check_box(box, where: str) -> tuple:
    if not isinstance(box, (list, tuple)) or len(box) != 4:
        raise AnnotationError(f"{where}: box must have 4 coordinates")
    try:
        vals = tuple(float(v) for v in box)
    except (TypeError, ValueError):
        raise AnnotationError(f"{where}: box coordinates must be numbers") from None
    if not all(np.isfinite(vals)):
        raise AnnotationError(f"{where}: non-finite box coordinate")
    if min(vals) < 0 or max(vals) > 1:
        raise AnnotationError(f"{where}: box {list(vals)} outside [0, 1]")
    if vals[0] > vals[2] or vals[1] > vals[3]:
        raise AnnotationError(f"{where}: box corners out of order {list(vals)}")
    return vals


def _check_id(value, limit: int, what: str, where: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise AnnotationError(f"{where}: {what} id must be an integer")
    if not 0 <= value < limit:
        raise AnnotationError(f"{where}: {what} id {value} out of range [0, {limit})")
    return value


def load_categories(path: str | os.PathLike):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing category table {path}")
    doc = json.loads(path.read_text())
    objects, verbs = list(doc["objects"]), list(doc["verbs"])
    pairs, counts = [], []
    for i, h in enumerate(doc["hois"]):
        where = f"{path}: hois[{i}]"
        pairs.append((_check_id(h["object"], len(objects), "object", where),
                      _check_id(h["verb"], len(verbs), "verb", where)))
        counts.append(int(h.get("train_count", 0)))
    if len(set(pairs)) != len(pairs):
        raise AnnotationError(f"{path}: duplicate (object, verb) pairs in hoi table")
    return objects, verbs, pairs, counts


def load_dataset(root: str | os.PathLike, schema: str = "jsonl-v1") -> DatasetIndex:
    """Read and validate a dataset root (see module docstring for the schema)."""
    if schema != "jsonl-v1":
        raise ValueError(f"unknown annotation schema {schema!r}")
    root = Path(root)
    objects, verbs, pairs, counts = load_categories(root / "categories.json")
    known = set(pairs)
    ann_path = root / "annotations.jsonl"
    if not ann_path.exists():
        raise FileNotFoundError(f"missing annotation file {ann_path}")
    images, seen = [], set()
    for lineno, line in enumerate(ann_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        where = f"{ann_path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"{where}: malformed JSON ({exc.msg})") from None
        try:
            image_id = str(rec["id"])
            if image_id in seen:
                raise AnnotationError(f"{where}: duplicate image id {image_id!r}")
            seen.add(image_id)
            anns = []
            for j, h in enumerate(rec.get("hois", [])):
                w = f"{where}: hois[{j}]"
                o = _check_id(h["object_class"], len(objects), "object", w)
                v = _check_id(h["verb"], len(verbs), "verb", w)
                if (o, v) not in known:
                    raise AnnotationError(f"{w}: (object {o}, verb {v}) is not a known HOI category")
                anns.append(Annotation(_check_box(h["human"], w), _check_box(h["object"], w), o, v))
            images.append(ImageRecord(image_id, rec["file"], int(rec["width"]), int(rec["height"]),
                                      anns, rec.get("difficulty", "clear")))
        except KeyError as exc:
            raise AnnotationError(f"{where}: missing field {exc.args[0]!r}") from None
    return DatasetIndex(objects, verbs, pairs, counts, images, root)


def convert_hico_det(records: list[dict], objects: Sequence[str], verbs: Sequence[str],
                     hoi_pairs: Sequence[tuple[int, int]], object_id_map: Optional[dict] = None,
                     verb_offset: int = 1) -> DatasetIndex:
    """Convert official-style HICO-DET annotations (QPIC json layout) to an index.

    Each record has ``file_name``, ``width``, ``height``, ``annotations`` (list of
    ``{"bbox": [x0, y0, x1, y1] in pixels, "category_id"}``) and ``hoi_annotation``
    (``{"subject_id", "object_id", "category_id"}`` with 1-based verb ids by
    default). ``object_id_map`` maps dataset object ids to 0-based indices.
    """
    images = []
    for rec in records:
        w, h = float(rec["width"]), float(rec["height"])
        boxes = rec["annotations"]

        def norm(b):
            return (b[0] / w, b[1] / h, b[2] / w, b[3] / h)

        anns = []
        for hoi in rec.get("hoi_annotation", []):
            obj = boxes[hoi["object_id"]]
            cls = obj["category_id"]
            cls = object_id_map[cls] if object_id_map else cls
            anns.append(Annotation(norm(boxes[hoi["subject_id"]]["bbox"]), norm(obj["bbox"]),
                                   int(cls), int(hoi["category_id"]) - verb_offset))
        image_id = Path(rec["file_name"]).stem
        images.append(ImageRecord(image_id, f"images/{rec['file_name']}", int(w), int(h), anns))
    index = DatasetIndex(list(objects), list(verbs), list(hoi_pairs), [0] * len(hoi_pairs), images)
    index.train_counts = index.count_hois()
    return index
