import json
import math
import random

import numpy as np
import pytest
import torch

from contexthoi.evaluation import (CategoryMeta, DetectionRecord, GroundTruthRecord, average_precision,
                                   compute_map, read_detections, read_subset, score_predictions,
                                   to_verb_level, verb_meta, write_detections, write_report,
                                   write_subset)

META = CategoryMeta([(0, 0), (0, 1), (1, 0)], [3, 20, 50])
H = (0.1, 0.1, 0.4, 0.6)
O = (0.5, 0.4, 0.8, 0.7)


def gt(img, hoi, h=H, o=O):
    return GroundTruthRecord(img, hoi, h, o)


def det(img, hoi, score, h=H, o=O):
    return DetectionRecord(img, hoi, score, h, o)


def test_single_hit():
    res = compute_map([det("a", 1, 0.9)], [gt("a", 1)], META)
    assert res["per_category"] == {1: 1.0} and res["full"] == 1.0


def test_ranked_miss():
    wrong = (0.6, 0.0, 0.9, 0.3)
    res = compute_map([det("a", 1, 0.9, h=wrong), det("a", 1, 0.5)], [gt("a", 1)], META)
    assert res["per_category"][1] == 0.5


def test_iou_threshold_rejection():
    # human IoU exactly 1/7 (boxes [0,0,2,2] and [1,1,3,3] scaled by 0.1); object perfect
    res = compute_map([det("a", 0, 0.9, h=(0.0, 0.0, 0.2, 0.2))],
                      [gt("a", 0, h=(0.1, 0.1, 0.3, 0.3))], META)
    assert res["per_category"][0] == 0.0


def test_strict_threshold_at_half():
    # human IoU exactly 0.5 is not enough
    res = compute_map([det("a", 0, 0.9, h=(0.0, 0.0, 0.5, 1.0))], [gt("a", 0, h=(0.0, 0.0, 1.0, 1.0))], META)
    assert res["per_category"][0] == 0.0


def test_duplicates_one_tp():
    res = compute_map([det("a", 1, 0.9), det("a", 1, 0.8), det("a", 1, 0.7)], [gt("a", 1)], META)
    assert res["per_category"][1] == 1.0
    res = compute_map([det("a", 1, 0.9), det("a", 1, 0.8)], [gt("a", 1), gt("b", 1)], META)
    assert res["per_category"][1] == 0.5


def test_splits():
    dets = [det("a", 0, 0.9), det("a", 1, 0.9, h=(0.7, 0.7, 0.9, 0.9))]
    res = compute_map(dets, [gt("a", 0), gt("a", 1)], META)
    assert res["rare"] == 1.0 and res["non_rare"] == 0.0 and res["full"] == 0.5
    res = compute_map([det("a", 1, 0.9)], [gt("a", 1)], META)
    assert math.isnan(res["rare"])


def test_errors():
    with pytest.raises(ValueError):
        compute_map([], [], META)
    with pytest.raises(ValueError):
        compute_map([], [gt("a", 0)], META, subset=[])


def _random_case(rng, n_img=6):
    gts, dets = [], []
    for i in range(n_img):
        for _ in range(rng.integers(1, 3)):
            g = gt(f"img{i}", int(rng.integers(0, 3)))
            gts.append(g)
            dets.append(det(g.image_id, g.hoi_id, float(rng.uniform(0, 1))))
        for _ in range(rng.integers(0, 3)):
            dets.append(det(f"img{i}", int(rng.integers(0, 3)), float(rng.uniform(0, 1)),
                            h=(0.5, 0.5, 0.9, 0.9)))
    return dets, gts


def test_order_invariance():
    rng = np.random.default_rng(0)
    for _ in range(20):
        dets, gts = _random_case(rng)
        ref = compute_map(dets, gts, META)
        random.Random(1).shuffle(dets)
        assert compute_map(dets, gts, META) == ref


def test_subset_all_equals_full():
    dets, gts = _random_case(np.random.default_rng(1))
    ids = sorted({g.image_id for g in gts})
    assert compute_map(dets, gts, META, subset=ids) == compute_map(dets, gts, META)


def test_adding_correct_detection_never_hurts():
    rng = np.random.default_rng(2)
    for _ in range(20):
        dets, gts = _random_case(rng)
        dets = [d for d in dets if rng.uniform() < 0.6]
        before = compute_map(dets, gts, META)
        # a GT is unmatched when its (image, hoi) has more GT than correct detections
        correct = [(d.image_id, d.hoi_id) for d in dets if d.human_box == H]
        open_gts = [g for g in gts if sum(k == (g.image_id, g.hoi_id) for k in correct)
                    < sum((x.image_id, x.hoi_id) == (g.image_id, g.hoi_id) for x in gts)]
        if not open_gts:
            continue
        g = open_gts[int(rng.integers(0, len(open_gts)))]
        after = compute_map(dets + [det(g.image_id, g.hoi_id, float(rng.uniform(0, 1)))], gts, META)
        for k in ("full", "rare", "non_rare"):
            if not math.isnan(before[k]):
                assert after[k] >= before[k] - 1e-12


def test_subset_file_restricts(tmp_path):
    ids = [f"img{i:04d}" for i in range(1000)]
    gts = [gt(i, k % 3) for k, i in enumerate(ids)]
    dets = [det(i, k % 3, 0.5) for k, i in enumerate(ids)]
    write_subset(tmp_path / "ambiguous.txt", ids[:659])
    subset = read_subset(tmp_path / "ambiguous.txt", ids)
    assert len(subset) == 659
    res = compute_map(dets, gts, META, subset=subset)
    assert res["num_images"] == 659 and res["num_ground_truth"] == 659 and res["num_detections"] == 659
    with pytest.raises(ValueError):
        read_subset(tmp_path / "ambiguous.txt", ids[:10])


def test_eleven_point_mode():
    assert average_precision(np.array([0.0, 1.0]), 1, "eleven_point") == pytest.approx(0.5)
    with pytest.raises(ValueError):
        average_precision(np.array([1.0]), 1, "bogus")


def test_score_predictions():
    # one query, object class 0 with prob 0.5, interaction prob 0.8 for hoi 0 (object 0)
    obj_logits = torch.log(torch.tensor([[[0.5, 0.3, 0.2]]]))
    hoi_logits = torch.logit(torch.tensor([[[0.8, 0.1, 0.1]]]))
    boxes = torch.tensor([[[0.5, 0.5, 0.2, 0.2]]])
    recs = score_predictions(boxes, boxes, obj_logits, hoi_logits, ["x"], [0, 0, 1])
    assert recs[0].hoi_id == 0 and recs[0].score == pytest.approx(0.4, abs=1e-6)
    assert [r.score for r in recs] == sorted((r.score for r in recs), reverse=True)
    assert recs[0].human_box == pytest.approx((0.4, 0.4, 0.6, 0.6))


def test_score_predictions_all_no_object():
    obj_logits = torch.tensor([[[0.0, 0.0, 9.0], [0.0, 0.0, 9.0]]])
    recs = score_predictions(torch.rand(1, 2, 4), torch.rand(1, 2, 4), obj_logits, torch.randn(1, 2, 3),
                             ["x"], [0, 0, 1])
    assert recs == []


def test_top_k():
    recs = score_predictions(torch.rand(1, 4, 4), torch.rand(1, 4, 4), torch.randn(1, 4, 3) + torch.tensor([5.0, 0, 0]),
                             torch.randn(1, 4, 3), ["x"], [0, 0, 1], top_k=5)
    assert len(recs) == 5


def test_detection_file_roundtrip(tmp_path):
    dets = [det("a", 1, 0.25), det("b", 2, 0.125, h=(0.0, 0.5, 0.25, 0.75))]
    write_detections(tmp_path / "d.txt", dets)
    lines = (tmp_path / "d.txt").read_text().splitlines()
    assert lines[0].split() == ["a", "1", "0.250000", "0.100000", "0.100000", "0.400000", "0.600000",
                                "0.500000", "0.400000", "0.800000", "0.700000"]
    assert read_detections(tmp_path / "d.txt") == dets


def test_report(tmp_path):
    res = compute_map([det("a", 1, 0.9)], [gt("a", 1)], META)
    write_report(tmp_path / "r.json", res, META)
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["full"] == 1.0 and doc["rare"] is None
    assert doc["per_category"] == [{"hoi_id": 1, "ap": 1.0, "object": 0, "verb": 1, "rare": False}]


def test_verb_level():
    recs = to_verb_level([gt("a", 2), gt("a", 1)], META)
    assert [r.hoi_id for r in recs] == [0, 1]
    vm = verb_meta(META)
    assert vm.train_counts == [53, 20]
