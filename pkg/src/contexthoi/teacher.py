"""Semantic teacher plug-in interface and the deterministic desk-scale stub.

A teacher supplies unit-norm text embeddings for category prompts and a
unit-norm visual token map for images. Providers are looked up by name; the
name ``"stub"`` is always available and ``"none"`` means no teacher.
"""
from __future__ import annotations

import hashlib
import logging
from importlib import resources
from typing import Callable, Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

log = logging.getLogger(__name__)


class SemanticTeacher(Protocol):
    dim: int

    def text_embed(self, prompts: Sequence[str]) -> Tensor: ...

    def visual_embed(self, images: Tensor) -> Tensor: ...


class StubTeacher(nn.Module):
    """Frozen stand-in for a vision-language model.

    Text embeddings are unit vectors drawn from an RNG seeded by the SHA-256
    of the prompt. Visual embeddings are a fixed random linear map of
    non-overlapping ``patch x patch`` pixel blocks, normalized per token.
    """

    def __init__(self, dim: int = 64, patch: int = 8, seed: int = 0):
        super().__init__()
        self.dim = dim
        self.patch = patch
        rng = np.random.default_rng(seed)
        proj = rng.standard_normal((3 * patch * patch, dim)) / np.sqrt(3 * patch * patch)
        self.register_buffer("proj", torch.from_numpy(proj).float(), persistent=False)

    def text_embed(self, prompts: Sequence[str]) -> Tensor:
        rows = []
        for prompt in prompts:
            digest = hashlib.sha256(prompt.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            v = rng.standard_normal(self.dim)
            rows.append(v / np.linalg.norm(v))
        return torch.tensor(np.stack(rows), dtype=self.proj.dtype)

    @torch.no_grad()
    def visual_embed(self, images: Tensor) -> Tensor:
        p = self.patch
        h, w = images.shape[-2:]
        images = F.pad(images, (0, (-w) % p, 0, (-h) % p))
        patches = F.unfold(images, kernel_size=p, stride=p).transpose(1, 2)  # [B, HW', 3p^2]
        return F.normalize(patches @ self.proj.to(images.dtype), dim=-1)

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        return -(-h // self.patch), -(-w // self.patch)


_PROVIDERS: dict[str, Callable[..., SemanticTeacher]] = {"stub": StubTeacher}


def register_teacher(name: str, factory: Callable[..., SemanticTeacher]) -> None:
    """Make an external teacher (for instance a CLIP wrapper) available by name."""
    _PROVIDERS[name] = factory


def build_teacher(name: str, **kwargs) -> SemanticTeacher | None:
    if name in ("none", "", None):
        return None
    try:
        factory = _PROVIDERS[name]
    except KeyError:
        log.warning("teacher provider %r unavailable; teacher features fall back to zeros", name)
        return None
    try:
        return factory(**kwargs)
    except Exception as exc:  # provider failed to load its weights, etc.
        log.warning("teacher provider %r failed to load (%s); falling back to zeros", name, exc)
        return None


def load_prompt_templates() -> dict[str, str]:
    """Read ``assets/prompts.txt``: one ``<kind>\\t<template>`` prompt per line."""
    text = resources.files("contexthoi").joinpath("assets/prompts.txt").read_text()
    templates = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        kind, template = line.split("\t", 1)
        templates[kind] = template
    return templates


def category_prompts(objects: Sequence[str], verbs: Sequence[str]) -> tuple[list[str], list[str]]:
    templates = load_prompt_templates()
    return ([templates["object"].format(name=o) for o in objects],
            [templates["verb"].format(name=v) for v in verbs])


class TeacherAdapter(nn.Module):
    """Linear map from teacher width to model width followed by LayerNorm."""

    def __init__(self, teacher_dim: int, hidden_dim: int):
        super().__init__()
        self.proj = nn.Linear(teacher_dim, hidden_dim)
        self.norm = nn.LayerNorm(hidden_dim)

    def forward(self, visual: Tensor) -> Tensor:
        return self.norm(self.proj(visual))


def teacher_visual_feature(images: Tensor, teacher: SemanticTeacher | None,
                           adapter: TeacherAdapter, hidden_dim: int) -> Tensor:
    """Teacher visual map adapted to ``[B, HW', hidden_dim]``; zeros without a teacher."""
    if teacher is None:
        return images.new_zeros(images.shape[0], 1, hidden_dim)
    return adapter(teacher.visual_embed(images))
