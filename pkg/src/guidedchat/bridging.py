"""Intent-keyword bridging.

Fuses the dialogue context with the pooled scenario, predicts independent
per-label probabilities for keyword-types and keyword-topics over the next m
turns, selects keywords (hard top-m or soft thresholded), and max-pools their
embeddings into the 2 x d bridge state injected into decoder cross-attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .backbone import EncoderState
from .corpus import TrainingExample
from .scenario import masked_mean

Pick = tuple[int, float]  # (label id, weight)


@dataclass
class KeywordDistribution:
    """Independent per-label probabilities from the two classification heads."""

    type_probs: np.ndarray
    topic_probs: np.ndarray

    @staticmethod
    def from_tensors(type_probs: Tensor, topic_probs: Tensor) -> "KeywordDistribution":
        return KeywordDistribution(
            type_probs=type_probs.detach().cpu().numpy().reshape(-1),
            topic_probs=topic_probs.detach().cpu().numpy().reshape(-1),
        )


@dataclass
class BridgeSelection:
    mode: str  # "hard" | "soft"
    type_picks: list[Pick]
    topic_picks: list[Pick]
    fallback: bool = False  # soft mode picked nothing above threshold

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "type_picks": [{"id": i, "weight": w} for i, w in self.type_picks],
            "topic_picks": [{"id": i, "weight": w} for i, w in self.topic_picks],
            "fallback": self.fallback,
        }


class Fusion(nn.Module):
    """Gated additive fusion of a pooled context summary with F_k and F_u.

    The context summary is additive-attention pooling over the hidden states;
    its scorer is zero-initialized, so at init the summary is exactly the
    masked mean and training can only sharpen it from there. Source
    projections carry no bias so a zeroed source contributes exactly nothing;
    per-source sigmoid gates start at 0.5 (zero logits).
    """

    def __init__(self, d: int):
        super().__init__()
        self.attn_proj = nn.Linear(d, d, bias=False)
        self.attn_score = nn.Parameter(torch.zeros(d))
        self.context_proj = nn.Linear(d, d, bias=False)
        self.knowledge_proj = nn.Linear(d, d, bias=False)
        self.profile_proj = nn.Linear(d, d, bias=False)
        self.gate_logits = nn.Parameter(torch.zeros(3, d))
        self.out_proj = nn.Linear(d, d, bias=False)

    def pool_context(self, context: EncoderState) -> Tensor:
        if not context.mask.any(dim=-1).all():
            raise ValueError("cannot pool a fully masked sequence")
        scores = torch.tanh(self.attn_proj(context.hidden)) @ self.attn_score
        scores = scores.masked_fill(~context.mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        return (weights.unsqueeze(-1) * context.hidden).sum(dim=-2)

    def forward(self, context: EncoderState, f_k: Tensor, f_u: Tensor) -> Tensor:
        gates = torch.sigmoid(self.gate_logits)
        mixed = (
            gates[0] * self.context_proj(self.pool_context(context))
            + gates[1] * self.knowledge_proj(f_k)
            + gates[2] * self.profile_proj(f_u)
        )
        return self.out_proj(mixed)


class KeywordHeads(nn.Module):
    """Single affine maps d -> x_a and d -> x_t with elementwise logistic."""

    def __init__(self, d: int, n_types: int, n_topics: int):
        super().__init__()
        self.cls_type = nn.Linear(d, n_types)
        self.cls_topic = nn.Linear(d, n_topics)

    def forward(self, fusion: Tensor) -> tuple[Tensor, Tensor]:
        """Probabilities (..., x_a) and (..., x_t), kept strictly inside (0, 1)
        even where the float sigmoid would saturate."""
        eps = torch.finfo(fusion.dtype).eps
        return (
            torch.sigmoid(self.cls_type(fusion)).clamp(eps, 1.0 - eps),
            torch.sigmoid(self.cls_topic(fusion)).clamp(eps, 1.0 - eps),
        )


class KeywordEmbeddings(nn.Module):
    """Independent trainable tables for keyword-types and keyword-topics."""

    def __init__(self, n_types: int, n_topics: int, d: int):
        super().__init__()
        self.emb_type = nn.Embedding(n_types, d)
        self.emb_topic = nn.Embedding(n_topics, d)


def predict_keywords(heads: KeywordHeads, fusion: Tensor) -> KeywordDistribution:
    type_probs, topic_probs = heads(fusion)
    return KeywordDistribution.from_tensors(type_probs, topic_probs)


def _rank(probs: np.ndarray) -> np.ndarray:
    """Indices by descending probability, ties by ascending id."""
    return np.argsort(-np.asarray(probs, dtype=np.float64), kind="stable")


def select_hard(dist: KeywordDistribution, m: int) -> BridgeSelection:
    """The m most probable labels per head, all with weight 1.0."""
    n = min(len(dist.type_probs), len(dist.topic_probs))
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    type_ids = sorted(_rank(dist.type_probs)[:m])
    topic_ids = sorted(_rank(dist.topic_probs)[:m])
    return BridgeSelection(
        mode="hard",
        type_picks=[(int(i), 1.0) for i in type_ids],
        topic_picks=[(int(i), 1.0) for i in topic_ids],
    )


def _soft_picks(probs: np.ndarray, threshold: float) -> tuple[list[Pick], bool]:
    probs = np.asarray(probs, dtype=np.float64)
    ids = [int(i) for i in np.flatnonzero(probs >= threshold)]
    if not ids:  # fall back to the single most probable label
        j = int(_rank(probs)[0])
        return [(j, float(probs[j]))], True
    picks = [(i, float(probs[i])) for i in ids]
    picks.sort(key=lambda p: (-p[1], p[0]))
    return picks, False


def select_soft(dist: KeywordDistribution, threshold: float) -> BridgeSelection:
    """All labels with probability >= threshold, weighted by that probability."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    type_picks, fb_a = _soft_picks(dist.type_probs, threshold)
    topic_picks, fb_t = _soft_picks(dist.topic_probs, threshold)
    return BridgeSelection(mode="soft", type_picks=type_picks, topic_picks=topic_picks,
                           fallback=fb_a or fb_t)


def teacher_selection(example: TrainingExample, n_types: int) -> BridgeSelection:
    """Gold positives as a hard selection (training-time supervision path)."""
    type_ids = example.positive_type_ids(n_types)
    topic_ids = example.positive_topic_ids(n_types)
    if not type_ids or not topic_ids:
        raise ValueError("gold keyword targets must contain a type and a topic positive")
    return BridgeSelection(
        mode="hard",
        type_picks=[(i, 1.0) for i in type_ids],
        topic_picks=[(i, 1.0) for i in topic_ids],
    )


def bridge_state(selection: BridgeSelection, embeddings: KeywordEmbeddings) -> Tensor:
    """Stack max-pooled type and topic rows into the (2, d) bridge state.

    Soft-mode pick weights scale the embedding rows before the max; hard-mode
    weights are 1.0, leaving the raw embeddings.
    """
    rows = []
    for picks, table in ((selection.type_picks, embeddings.emb_type),
                         (selection.topic_picks, embeddings.emb_topic)):
        if not picks:
            raise ValueError("selection has an empty pick list")
        ids = torch.tensor([i for i, _ in picks], dtype=torch.long)
        weights = torch.tensor([w for _, w in picks], dtype=table.weight.dtype)
        scaled = table(ids) * weights.unsqueeze(-1)
        rows.append(scaled.max(dim=0).values)
    return torch.stack(rows, dim=0)
