"""Conversational scenario modeling.

Knowledge and profile encodings are average-pooled, passed through small
per-source MLPs, summed, and projected onto the vocabulary to give an
additive generation bias. The bias is applied to decoder logits pre-softmax;
its normalized form exists for inspection only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .backbone import EncoderState


@dataclass
class PooledScenario:
    """F_k and F_u outputs, shape (..., d); zeros when a source is ablated."""

    f_k: Tensor
    f_u: Tensor

    def __post_init__(self) -> None:
        if not (torch.isfinite(self.f_k).all() and torch.isfinite(self.f_u).all()):
            raise ValueError("pooled scenario contains non-finite values")


@dataclass
class ScenarioBias:
    logits: Tensor  # (..., V)
    normalized: Tensor  # softmax(logits)


def masked_mean(hidden: Tensor, mask: Tensor) -> Tensor:
    """Mean over valid rows; (..., L, d) x (..., L) -> (..., d)."""
    counts = mask.sum(dim=-1)
    if (counts == 0).any():
        raise ValueError("cannot pool a fully masked sequence")
    total = (hidden * mask.unsqueeze(-1).to(hidden.dtype)).sum(dim=-2)
    return total / counts.unsqueeze(-1).to(hidden.dtype)


class PoolingMLP(nn.Module):
    """Average pooling followed by a two-layer perceptron (d -> d -> d)."""

    def __init__(self, d: int):
        super().__init__()
        self.fc1 = nn.Linear(d, d)
        self.fc2 = nn.Linear(d, d)

    def forward(self, enc: EncoderState) -> Tensor:
        return self.fc2(torch.tanh(self.fc1(masked_mean(enc.hidden, enc.mask))))


class ScenarioEncoder(nn.Module):
    """The per-source mapping functions; separate parameters per source."""

    def __init__(self, d: int):
        super().__init__()
        self.knowledge_mlp = PoolingMLP(d)
        self.profile_mlp = PoolingMLP(d)

    def pool(self, enc: EncoderState, which: str) -> Tensor:
        if which == "knowledge":
            return self.knowledge_mlp(enc)
        if which == "profile":
            return self.profile_mlp(enc)
        raise ValueError(f"which must be knowledge|profile, got {which!r}")


class ScenarioBiasHead(nn.Module):
    """Trainable |V| x d projection; no additive term."""

    def __init__(self, d: int, vocab_size: int):
        super().__init__()
        self.proj = nn.Linear(d, vocab_size, bias=False)

    def forward(self, pooled: PooledScenario) -> ScenarioBias:
        return scenario_bias(pooled, self.proj.weight)


def pool_scenario(encoder: ScenarioEncoder, enc: EncoderState, which: str) -> Tensor:
    return encoder.pool(enc, which)


def scenario_bias(pooled: PooledScenario, matrix: Tensor) -> ScenarioBias:
    """logits = matrix @ (f_k + f_u); normalized = softmax(logits)."""
    summed = pooled.f_k + pooled.f_u
    if matrix.shape[-1] != summed.shape[-1]:
        raise ValueError(
            f"bias matrix width {matrix.shape[-1]} != pooled dim {summed.shape[-1]}")
    logits = summed @ matrix.t()
    return ScenarioBias(logits=logits, normalized=torch.softmax(logits, dim=-1))


def ablate(pooled: PooledScenario, drop_k: bool = False,
           drop_u: bool = False) -> PooledScenario:
    """Replace dropped components with zeros (the -F_k / -F_u variants)."""
    return PooledScenario(
        f_k=torch.zeros_like(pooled.f_k) if drop_k else pooled.f_k,
        f_u=torch.zeros_like(pooled.f_u) if drop_u else pooled.f_u,
    )


def top_biased_tokens(bias: ScenarioBias, id_to_token: list[str],
                      k: int = 10) -> list[dict]:
    """Inspection view: the k most-favored tokens, ties broken by ascending id."""
    probs = bias.normalized.detach().reshape(-1).cpu().numpy()
    order = np.argsort(-probs, kind="stable")[: min(k, len(probs))]
    return [{"token": id_to_token[int(i)], "prob": float(probs[i])} for i in order]
