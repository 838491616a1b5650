import shutil

import pytest
import torch

from contexthoi import engine
from contexthoi.engine import (TrainingAborted, build_model, load_checkpoint, read_metrics,
                               save_checkpoint, train, verb_accuracy)


def test_metrics_stream_and_files(desk_cfg, tiny_data):
    desk_cfg.checkpoint_every = 1
    result = train(desk_cfg, tiny_data)
    out = result.metrics_path.parent
    records = read_metrics(result.metrics_path)
    assert [r["step"] for r in records] == list(range(1, 5))
    for key in ("loss", "loss_hoi", "loss_sc", "loss_fc", "loss_rc", "loss_ic", "lr", "epoch"):
        assert key in records[0]
    assert records == result.history
    assert {p.name for p in out.iterdir()} >= {"config.yaml", "metrics.jsonl", "checkpoint_last.pt",
                                                "checkpoint_epoch1.pt", "checkpoint_epoch2.pt"}


def test_per_epoch_eval_records(desk_cfg, tiny_data):
    desk_cfg.eval.every_epochs = 1
    result = train(desk_cfg, tiny_data, eval_data=tiny_data)
    evals = [r for r in result.history if "eval_full" in r]
    assert [r["epoch"] for r in evals] == [0, 1]


def test_checkpoint_roundtrip(tmp_path, desk_cfg, tiny_data):
    model = build_model(desk_cfg, tiny_data)
    save_checkpoint(tmp_path / "c.pt", model, desk_cfg, tiny_data)
    loaded, cfg, cats, _ = load_checkpoint(tmp_path / "c.pt")
    assert cfg == desk_cfg and cats.hoi_pairs == tiny_data.hoi_pairs
    img = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        assert torch.equal(loaded(img).hoi_logits, model.eval()(img).hoi_logits)


def test_checkpoint_shape_mismatch(tmp_path, desk_cfg, tiny_data):
    save_checkpoint(tmp_path / "c.pt", build_model(desk_cfg, tiny_data), desk_cfg, tiny_data)
    state = torch.load(tmp_path / "c.pt", weights_only=False)
    state["model"]["tau.raw"] = torch.zeros(3)
    torch.save(state, tmp_path / "c.pt")
    with pytest.raises(ValueError, match="shape mismatch"):
        load_checkpoint(tmp_path / "c.pt")
    state["version"] = 99
    torch.save(state, tmp_path / "c.pt")
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(tmp_path / "c.pt")


def test_resume_continues_identically(tmp_path, desk_cfg, tiny_data):
    desk_cfg.checkpoint_every = 1
    full = train(desk_cfg, tiny_data)
    # replay from the epoch-1 checkpoint in a copy of the run directory
    copy = tmp_path / "copy"
    shutil.copytree(desk_cfg.output_dir, copy)
    desk_cfg.output_dir = str(copy)
    resumed = train(desk_cfg, tiny_data, resume=copy / "checkpoint_epoch1.pt")
    assert read_metrics(resumed.metrics_path) == read_metrics(full.metrics_path)
    for k, v in full.model.state_dict().items():
        assert torch.equal(v, resumed.model.state_dict()[k]), k


def test_non_finite_loss_aborts_with_checkpoint(desk_cfg, tiny_data, monkeypatch):
    desk_cfg.checkpoint_every = 1
    calls = {"n": 0}
    real = engine.collate

    def poisoned(data, records, size):
        images, targets = real(data, records, size)
        calls["n"] += 1
        if calls["n"] == 3:  # first step of the second epoch
            images = images * float("nan")
        return images, targets

    monkeypatch.setattr(engine, "collate", poisoned)
    with pytest.raises(TrainingAborted) as info:
        train(desk_cfg, tiny_data)
    assert info.value.checkpoint is not None and info.value.checkpoint.name == "checkpoint_last.pt"
    assert "step 2" in str(info.value)
    _, _, _, state = load_checkpoint(info.value.checkpoint)
    assert state["epoch"] == 1


def test_empty_training_set(desk_cfg, tiny_data):
    with pytest.raises(ValueError):
        train(desk_cfg, tiny_data.restrict([]))


def test_verb_accuracy_bounds(desk_cfg, tiny_data):
    acc = verb_accuracy(build_model(desk_cfg, tiny_data), tiny_data, 64)
    assert 0.0 <= acc <= 1.0 and (acc * 8) == int(acc * 8)
