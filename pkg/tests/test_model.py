from collections import Counter

import pytest
import torch

from contexthoi.config import ModelConfig, SwitchConfig
from contexthoi.model import FeatureEncoder, QueryDecoder, VisualMemory, build_backbone
from contexthoi.matching import SetCriterion, Target
from contexthoi.config import LossConfig

from conftest import HOI_PAIRS, make_model


def test_encoder_shape_and_determinism(model):
    img = torch.rand(1, 3, 64, 64)
    a = model.encoder(torch.cat([img, img]))
    assert a.tokens.shape == (2, 64, 32)
    assert a.pos.shape == (64, 32) and a.spatial_shape == (8, 8)
    assert torch.equal(a.tokens[0], a.tokens[1])
    assert torch.isfinite(a.tokens).all()


def test_encoder_rejects_tiny_images(model):
    with pytest.raises(ValueError, match="stride"):
        model.encoder(torch.rand(1, 3, 4, 64))


def test_paper_scale_shape_report():
    cfg = ModelConfig(hidden_dim=256, backbone="resnet50")
    enc = FeatureEncoder(cfg)
    h, w = enc.output_shape(800, 1333)
    assert (h, w) == (25, 42) and h * w == 1050
    # the report agrees with the real trunk on a small odd-sized input
    with torch.no_grad():
        feat = build_backbone("resnet50").eval()(torch.rand(1, 3, 100, 70))
    assert tuple(feat.shape[-2:]) == enc.output_shape(100, 70)


def _memory(b=2, hw=16, c=32, zero=False):
    tokens = torch.zeros(b, hw, c) if zero else torch.randn(b, hw, c)
    return VisualMemory(tokens, torch.randn(hw, c), (4, 4))


def test_instance_decoder_outputs(model):
    torch.manual_seed(0)
    mem = _memory(zero=True)
    ins = model.instance_decoder(mem)
    assert ins.per_layer.shape == (2, 2, 16, 32)
    m3 = make_model(dec_layers=3)
    assert m3.instance_decoder(mem).per_layer.shape == (2, 3, 16, 32)
    again = model.instance_decoder(mem)
    assert torch.equal(ins.z, again.z)
    from contexthoi.layers import pair_concat

    boxes = model.human_box_head(pair_concat(ins.z)).sigmoid()
    assert torch.isfinite(boxes).all() and ((boxes > 0) & (boxes < 1)).all()


def test_guidance_shape_mismatch(model):
    with pytest.raises(ValueError):
        model.instance_decoder(_memory(), torch.zeros(2, 8, 32))


def test_context_extractor_same_architecture(model):
    def shapes(mod):
        return Counter(tuple(p.shape) for n, p in mod.named_parameters()
                       if n not in ("query", "guided"))

    assert shapes(model.instance_decoder) == shapes(model.context_extractor)
    assert model.instance_decoder.query.shape == (16, 32)
    assert model.context_extractor.query.shape == (8, 32)


def test_context_boxes_shape_and_range(model):
    out = model.eval()(torch.rand(2, 3, 64, 64))
    assert out.context_boxes.shape == (2, 8, 4)
    assert ((out.context_boxes > 0) & (out.context_boxes < 1)).all()
    assert out.hoi_logits.shape == (2, 8, len(HOI_PAIRS))
    assert out.object_logits.shape == (2, 8, 4)


def test_disabled_context_branch_feeds_zeros():
    from contexthoi.teacher import teacher_visual_feature

    m = make_model(SwitchConfig(context_branch=False)).eval()
    img = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        out = m(img)
        z_v = teacher_visual_feature(img, m.teacher, m.teacher_adapter, 32)
        ref = m.aggregator(out.instance.z, torch.zeros(1, 8, 32), z_v)
    assert out.context is None and out.context_boxes is None
    assert torch.equal(out.hoi_logits, ref.hoi_logits)


def test_padding_rows_zero_and_garbage_free():
    torch.manual_seed(0)
    dec = QueryDecoder(6, ModelConfig()).eval()
    mem = _memory(b=1)
    pad = torch.tensor([False, True, False, False, True, False])
    offset = torch.randn(1, 6, 32)
    a = dec(mem, offset, pad)
    garbage = offset.clone()
    garbage[:, pad] = 1e4 * torch.randn(1, 2, 32)
    b = dec(mem, garbage, pad)
    assert torch.equal(a.z, b.z) and torch.equal(a.per_layer, b.per_layer)
    assert (a.z[:, pad] == 0).all() and (a.per_layer[:, :, pad] == 0).all()


def test_permutation_equivariance():
    torch.manual_seed(0)
    dec = QueryDecoder(6, ModelConfig()).double().eval()
    mem = VisualMemory(torch.randn(1, 16, 32, dtype=torch.float64),
                       torch.randn(16, 32, dtype=torch.float64), (4, 4))
    base = dec(mem).z
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    with torch.no_grad():
        dec.query.copy_(dec.query[perm])
        dec.guided.copy_(dec.guided[perm])
    assert torch.allclose(dec(mem).z, base[:, perm], atol=1e-10)


def test_finite_over_100_seeds(model):
    model.eval()
    with torch.no_grad():
        for seed in range(100):
            g = torch.Generator().manual_seed(seed)
            out = model(torch.rand(1, 3, 64, 64, generator=g))
            for t in (out.human_boxes, out.object_boxes, out.object_logits, out.hoi_logits,
                      out.context_boxes):
                assert torch.isfinite(t).all()


def _targets(b):
    t = Target(torch.tensor([[0.3, 0.4, 0.2, 0.3]]), torch.tensor([[0.6, 0.5, 0.2, 0.2]]),
               torch.tensor([1]), torch.zeros(1, len(HOI_PAIRS)))
    t.hoi_labels[0, 5] = 1
    return [t] * b


def test_every_parameter_receives_gradient(model):
    model.train()
    crit = SetCriterion(model.cfg, model.switches, LossConfig())
    out = model(torch.rand(2, 3, 64, 64), torch.Generator().manual_seed(0))
    crit(out, _targets(2), model.tau())["loss"].backward()
    missing = [n for n, p in model.named_parameters() if p.grad is None or not p.grad.abs().sum() > 0]
    assert missing == []


def test_sce_disabled_gives_zero_offsets_and_no_explorer_gradient():
    m = make_model(SwitchConfig(semantic_explorer=False))
    out = m(torch.rand(1, 3, 64, 64))
    assert out.guidance is None
    crit = SetCriterion(m.cfg, m.switches, LossConfig())
    crit(out, _targets(1), m.tau())["loss"].backward()
    assert all(p.grad is None for p in m.explorer.parameters())
    assert m.context_extractor.query.grad is not None


def test_seeded_forward_bit_identical():
    a = make_model(seed=1).train()
    b = make_model(seed=1).train()
    img = torch.rand(1, 3, 64, 64)
    oa = a(img, torch.Generator().manual_seed(9))
    ob = b(img, torch.Generator().manual_seed(9))
    assert torch.equal(oa.hoi_logits, ob.hoi_logits)
    assert torch.equal(oa.guidance.sim_instance, ob.guidance.sim_instance)
