"""Utterance generation: scenario-biased, bridge-augmented greedy decoding.

The pipeline per sample: encode knowledge/profile/context, pool the scenario
into a vocabulary bias, predict and select intent keywords, max-pool their
embeddings into the bridge state, prepend it to the cross-attention memory,
then decode greedily with the bias added to every step's logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor

from .backbone import EncoderState, pad_sequences
from .bridging import (
    BridgeSelection,
    KeywordDistribution,
    bridge_state,
    predict_keywords,
    select_hard,
    select_soft,
)
from .corpus import TrainingExample, Vocabulary
from .model import DialogueModel
from .scenario import PooledScenario, ScenarioBias, ablate, masked_mean, scenario_bias


@dataclass(frozen=True)
class RunOptions:
    """Inference/training switches shared across the pipeline."""

    mode: str = "hard"  # hard | soft
    m: int = 4
    delta: float = 0.2
    bias_scale: float = 1.0  # multiplier on the scenario bias logits
    use_csm: bool = True
    use_ikb: bool = True
    drop_k: bool = False
    drop_u: bool = False

    def __post_init__(self) -> None:
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"mode must be hard|soft, got {self.mode!r}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")


@dataclass
class GenerationContext:
    context_enc: EncoderState
    pooled: PooledScenario
    bias: ScenarioBias
    distribution: KeywordDistribution
    selection: BridgeSelection
    bridge: Tensor | None  # (2, d) or None when bridging is off
    memory: Tensor  # (1, M, d)
    memory_mask: Tensor  # (1, M)
    options: RunOptions
    vocab: Vocabulary


@dataclass
class GenerationResult:
    token_ids: list[int]
    text: str
    selection: BridgeSelection
    steps: list[dict] = field(default_factory=list)  # optional per-step trace


def encode_ids(model: DialogueModel, ids: list[int]) -> EncoderState:
    """Single-sequence encode; an empty sequence yields a fully masked state."""
    batch, mask = pad_sequences([list(ids)])
    if not ids:
        mask = torch.zeros_like(mask)
    return model.backbone.encode(batch, mask)


def pooled_or_zero(model: DialogueModel, enc: EncoderState, which: str) -> Tensor:
    """Ablation zero vector when the source is empty, else the pooled MLP output."""
    if not bool(enc.mask.any()):
        return torch.zeros(enc.hidden.shape[:-2] + enc.hidden.shape[-1:],
                           dtype=enc.hidden.dtype)
    return model.scenario.pool(enc, which)


def build_memory(context_enc: EncoderState, bridge: Tensor | None,
                 use_ikb: bool) -> tuple[Tensor, Tensor]:
    """Cross-attention memory: bridge rows prepended and unmasked when active."""
    hidden, mask = context_enc.hidden, context_enc.mask
    if hidden.dim() == 2:
        hidden, mask = hidden.unsqueeze(0), mask.unsqueeze(0)
    if not use_ikb or bridge is None:
        return hidden, mask
    if bridge.shape[-1] != hidden.shape[-1]:
        raise ValueError(
            f"bridge width {bridge.shape[-1]} != memory width {hidden.shape[-1]}")
    rows = bridge.unsqueeze(0) if bridge.dim() == 2 else bridge
    ones = torch.ones(rows.shape[:2], dtype=torch.bool)
    return torch.cat([rows, hidden], dim=1), torch.cat([ones, mask], dim=1)


def build_context(model: DialogueModel, example: TrainingExample, vocab: Vocabulary,
                  options: RunOptions,
                  selection: BridgeSelection | None = None) -> GenerationContext:
    """Assemble everything generation needs for one encoded sample.

    A `selection` may be forced (teacher/gold path); otherwise it follows
    options.mode from the predicted keyword distribution.
    """
    enc_k = encode_ids(model, list(example.knowledge_ids))
    enc_u = encode_ids(model, list(example.profile_ids))
    enc_h = encode_ids(model, list(example.context_ids))

    pooled = PooledScenario(
        f_k=pooled_or_zero(model, enc_k, "knowledge"),
        f_u=pooled_or_zero(model, enc_u, "profile"),
    )
    pooled = ablate(pooled, drop_k=options.drop_k, drop_u=options.drop_u)
    if not options.use_csm:
        pooled = ablate(pooled, drop_k=True, drop_u=True)
    bias = model.bias_head(pooled)

    fused = model.fusion(enc_h, pooled.f_k, pooled.f_u)
    dist = predict_keywords(model.heads, fused)
    if selection is None:
        if options.mode == "hard":
            selection = select_hard(dist, min(options.m, model.n_types, model.n_topics))
        else:
            selection = select_soft(dist, options.delta)
    bridge = bridge_state(selection, model.keyword_emb) if options.use_ikb else None
    memory, memory_mask = build_memory(enc_h, bridge, options.use_ikb)
    return GenerationContext(
        context_enc=enc_h, pooled=pooled, bias=bias, distribution=dist,
        selection=selection, bridge=bridge, memory=memory, memory_mask=memory_mask,
        options=options, vocab=vocab,
    )


def _step_bias(ctx: GenerationContext) -> Tensor | None:
    if not ctx.options.use_csm:
        return None
    return ctx.options.bias_scale * ctx.bias.logits.reshape(1, -1)


def generate(ctx: GenerationContext, model: DialogueModel,
             trace: bool = False) -> GenerationResult:
    """Greedy argmax decoding until the end token or the configured cap."""
    vocab = ctx.vocab
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            bias = _step_bias(ctx)
            prefix = torch.tensor([[vocab.bos_id]], dtype=torch.long)
            state = None
            out: list[int] = []
            steps: list[dict] = []
            for _ in range(model.config.max_tgt_len):
                logits, state = model.backbone.decode_step(
                    prefix, ctx.memory, ctx.memory_mask, logit_bias=bias, state=state)
                if not torch.isfinite(logits).all():
                    raise RuntimeError("non-finite logits during generation")
                next_id = int(torch.argmax(logits, dim=-1))
                if trace:
                    top = torch.topk(logits.reshape(-1), k=min(5, logits.numel()))
                    steps.append({
                        "token": vocab.id_to_token[next_id],
                        "top5": [[vocab.id_to_token[int(i)], float(v)]
                                 for v, i in zip(top.values, top.indices)],
                    })
                if next_id == vocab.eos_id:
                    break
                out.append(next_id)
                prefix = torch.cat([prefix, torch.tensor([[next_id]])], dim=1)
    finally:
        model.train(was_training)
    return GenerationResult(
        token_ids=out,
        text=" ".join(vocab.decode(out)),
        selection=ctx.selection,
        steps=steps,
    )


def score_reference(ctx: GenerationContext, reference_ids: list[int],
                    model: DialogueModel) -> list[float]:
    """Teacher-forced per-token negative log-likelihoods under the biased logits."""
    if not reference_ids:
        raise ValueError("reference must be non-empty")
    vocab = ctx.vocab
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            dec_input = torch.tensor([[vocab.bos_id] + list(reference_ids[:-1])],
                                     dtype=torch.long)
            dec_mask = torch.ones_like(dec_input, dtype=torch.bool)
            logits = model.backbone.decode_sequence(
                dec_input, dec_mask, ctx.memory, ctx.memory_mask,
                logit_bias=_step_bias(ctx))
            log_probs = torch.log_softmax(logits, dim=-1)[0]
            targets = torch.tensor(list(reference_ids), dtype=torch.long)
            nll = -log_probs[torch.arange(len(reference_ids)), targets]
    finally:
        model.train(was_training)
    return [float(x) for x in nll]
