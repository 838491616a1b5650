"""Run configuration: nested dataclasses with a YAML round-trip.

Two profiles exist. ``desk`` is the small CPU-sized model every test uses;
``paper`` carries the full-scale dimensions and schedule.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

ENV_SEED = "CONTEXTHOI_SEED"
ENV_OUTPUT_DIR = "CONTEXTHOI_OUTPUT_DIR"


@dataclass
class ModelConfig:
    hidden_dim: int = 32
    num_queries: int = 8
    enc_layers: int = 2
    dec_layers: int = 2
    nheads: int = 4
    dim_feedforward: int = 64
    dropout: float = 0.0
    backbone: str = "toy"  # toy | resnet50
    teacher: str = "stub"  # stub | none | registered provider id
    teacher_dim: int = 64
    teacher_patch: int = 8
    gumbel_temperature: float = 1.0
    tau_init: float = 0.5
    eps: float = 1e-8
    distance_reduction: str = "sum"  # sum | mean
    similarity_norm: str = "cosine_l2"  # cosine_l2 | formula_l1


@dataclass
class SwitchConfig:
    context_branch: bool = True
    semantic_explorer: bool = True
    teacher_branch: bool = True
    feature_constraint: bool = True
    region_constraint: bool = True
    instance_constraint: bool = True
    distance_weight: bool = True

    @property
    def spatial_constraints(self) -> bool:
        return self.context_branch and (
            self.feature_constraint or self.region_constraint or self.instance_constraint
        )


@dataclass
class LossConfig:
    lambda_fc: float = 4.0
    lambda_rc: float = 1.0
    lambda_ic: float = 4.0
    # conventional set-prediction terms (QPIC convention)
    box_l1: float = 2.5
    giou: float = 1.0
    object_class: float = 1.0
    interaction: float = 1.0
    no_object_weight: float = 0.1
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    cost_class: float = 1.0
    cost_interaction: float = 1.0
    cost_box: float = 2.5
    cost_giou: float = 1.0
    aux_loss: bool = False


@dataclass
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    lr_drop_epoch: int = 40
    lr_drop_factor: float = 0.1
    epochs: int = 60
    batch_size: int = 16
    grad_clip: float = 0.1


@dataclass
class DataConfig:
    root: str = ""
    eval_root: str = ""
    image_size: int = 64
    augment: bool = False
    num_workers: int = 0


@dataclass
class EvalConfig:
    top_k: int = 100
    iou_threshold: float = 0.5
    ap_mode: str = "all_points"  # all_points | eleven_point
    every_epochs: int = 0  # 0 disables per-epoch evaluation


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    output_dir: str = "runs/default"
    checkpoint_every: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    switches: SwitchConfig = field(default_factory=SwitchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_profile(cls, profile: str) -> "RunConfig":
        if profile == "desk":
            cfg = cls(profile="desk")
            cfg.optim = OptimConfig(lr=1e-3, weight_decay=1e-4, lr_drop_epoch=200,
                                    epochs=300, batch_size=4, grad_clip=0.1)
            return cfg
        if profile == "paper":
            return cls(
                profile="paper",
                model=ModelConfig(hidden_dim=256, num_queries=64, enc_layers=6, dec_layers=3,
                                  nheads=8, dim_feedforward=2048, dropout=0.1, backbone="resnet50",
                                  teacher_dim=768, teacher_patch=14),
                optim=OptimConfig(),
                data=DataConfig(image_size=800, augment=True, num_workers=4),
            )
        raise ValueError(f"unknown profile {profile!r}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return _build(cls, data, "config")

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ValueError("config document must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | os.PathLike, env: bool = True) -> "RunConfig":
        """Read a YAML config; missing keys take the values of its ``profile``.

        With ``env=True`` the seed and output directory may be overridden by the
        ``CONTEXTHOI_SEED`` and ``CONTEXTHOI_OUTPUT_DIR`` environment variables.
        """
        data = yaml.safe_load(Path(path).read_text()) or {}
        base = cls.from_profile(data.get("profile", "desk")).to_dict()
        cfg = cls.from_dict(_merge(base, data))
        if env:
            cfg.apply_env()
        return cfg

    def apply_env(self, environ=None) -> "RunConfig":
        environ = os.environ if environ is None else environ
        if environ.get(ENV_SEED):
            self.seed = int(environ[ENV_SEED])
        if environ.get(ENV_OUTPUT_DIR):
            self.output_dir = environ[ENV_OUTPUT_DIR]
        return self


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "switches"): SwitchConfig,
    (RunConfig, "loss"): LossConfig,
    (RunConfig, "optim"): OptimConfig,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "eval"): EvalConfig,
}


# Named module switch sets for ablation studies.
ABLATIONS: dict[str, dict[str, bool]] = {
    # context branch, spatial constraints and semantic explorer added in turn
    "instance_only": dict(context_branch=False, semantic_explorer=False, teacher_branch=False,
                          feature_constraint=False, region_constraint=False,
                          instance_constraint=False),
    # rows without the explorer carry no vision-language prior at all
    "context": dict(semantic_explorer=False, teacher_branch=False, feature_constraint=False,
                    region_constraint=False, instance_constraint=False),
    "context_sc": dict(semantic_explorer=False, teacher_branch=False),
    "context_sce": dict(feature_constraint=False, region_constraint=False, instance_constraint=False),
    "full": dict(),
    # constraint components, all with context branch and explorer on
    "constraints_none": dict(feature_constraint=False, region_constraint=False,
                             instance_constraint=False),
    "constraints_fc": dict(region_constraint=False, instance_constraint=False),
    "constraints_rc": dict(feature_constraint=False, instance_constraint=False),
    "constraints_ic_unweighted": dict(feature_constraint=False, region_constraint=False,
                                      distance_weight=False),
    "constraints_ic": dict(feature_constraint=False, region_constraint=False),
    "constraints_all": dict(),
    # aggregator sources: context only, context plus teacher
    "sources_zc": dict(teacher_branch=False),
    "sources_zc_zv": dict(),
}


def ablation_config(name: str, profile: str = "desk") -> RunConfig:
    cfg = RunConfig.from_profile(profile)
    for key, value in ABLATIONS[name].items():
        setattr(cfg.switches, key, value)
    return cfg
