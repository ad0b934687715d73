"""Joint training of the generation and keyword-prediction objectives.

L_total = L_lm + L_cls with unit weights; AdamW, linear warmup then constant
learning rate, global-norm gradient clipping, best-dev checkpointing, and a
float64 finite-difference gradient checker.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .backbone import pad_sequences
from .bridging import (
    BridgeSelection,
    KeywordDistribution,
    bridge_state,
    select_hard,
    teacher_selection,
)
from .corpus import DatasetSplit, KeywordInventory, TrainingExample, Vocabulary, encode_sample
from .generator import RunOptions
from .model import DialogueModel, save_checkpoint

PROB_EPS = 1e-7


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 3e-5
    batch_size: int = 8
    epochs: int = 50
    warmup_steps: int = 0  # 0 resolves to 5% of total steps at fit time
    clip_norm: float = 1.0
    weight_decay: float = 0.01
    seed: int = 0
    teacher_epochs: int | None = None  # switch to model hard selections after this epoch

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate, batch_size must be positive; epochs >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive (use math.inf to disable)")


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    lr: float = 0.0
    loss_lm: float = math.nan
    loss_cls: float = math.nan
    loss_total: float = math.nan
    grad_norm: float = math.nan
    best_dev_loss: float = math.inf

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in
                ("step", "epoch", "lr", "loss_lm", "loss_cls", "loss_total",
                 "grad_norm", "best_dev_loss")}


def loss_cls(probs: Tensor | KeywordDistribution, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy over all keyword labels, probabilities clamped."""
    if isinstance(probs, KeywordDistribution):
        probs = torch.from_numpy(
            np.concatenate([probs.type_probs, probs.topic_probs]).astype("float64"))
    if probs.shape != targets.shape:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)} vs "
                         f"targets {tuple(targets.shape)}")
    if (targets.sum(dim=-1) < 1).any():
        raise ValueError("every sample needs at least one positive keyword label")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    y = targets.to(p.dtype)
    return -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p)).mean()


def loss_lm(step_logits: Tensor, reference_ids: Tensor,
            pad_id: int = Vocabulary.pad_id) -> Tensor:
    """Mean per-token NLL under softmax of the (already biased) logits.

    Accepts (T, V) with (T,) ids or batched (B, T, V) with (B, T) ids; pad
    positions are excluded from the mean.
    """
    if step_logits.dim() == 2:
        step_logits, reference_ids = step_logits.unsqueeze(0), reference_ids.unsqueeze(0)
    if step_logits.shape[:2] != reference_ids.shape:
        raise ValueError("logit and reference lengths disagree")
    log_probs = torch.log_softmax(step_logits, dim=-1)
    nll = -log_probs.gather(-1, reference_ids.unsqueeze(-1)).squeeze(-1)
    keep = reference_ids != pad_id
    if not keep.any():
        raise ValueError("reference contains only padding")
    return nll[keep].mean()


@dataclass
class BatchLosses:
    lm: Tensor
    cls: Tensor

    @property
    def total(self) -> Tensor:
        return self.lm + self.cls


def batch_forward(model: DialogueModel, batch: list[TrainingExample],
                  options: RunOptions, selections: list[BridgeSelection] | None = None,
                  ) -> BatchLosses:
    """Teacher-forced forward pass over a batch of encoded samples.

    `selections` defaults to the gold keyword picks (teacher path); pass model
    hard selections to exercise scheduled sampling.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    from .generator import pooled_or_zero
    from .scenario import PooledScenario, ablate

    ids_k, mask_k = pad_sequences([list(ex.knowledge_ids) for ex in batch])
    ids_u, mask_u = pad_sequences([list(ex.profile_ids) for ex in batch])
    for i, ex in enumerate(batch):
        if not ex.profile_ids:
            mask_u[i] = False
    ids_h, mask_h = pad_sequences([list(ex.context_ids) for ex in batch])

    enc_k = model.backbone.encode(ids_k, mask_k)
    enc_u = model.backbone.encode(ids_u, mask_u)
    enc_h = model.backbone.encode(ids_h, mask_h)

    pooled = PooledScenario(
        f_k=pooled_or_zero(model, enc_k, "knowledge"),
        f_u=pooled_or_zero(model, enc_u, "profile"),
    )
    pooled = ablate(pooled, drop_k=options.drop_k, drop_u=options.drop_u)
    if not options.use_csm:
        pooled = ablate(pooled, drop_k=True, drop_u=True)

    fused = model.fusion(enc_h, pooled.f_k, pooled.f_u)
    type_probs, topic_probs = model.heads(fused)

    targets = torch.stack([torch.from_numpy(ex.keyword_targets) for ex in batch]).to(
        type_probs.dtype)
    if options.use_ikb:
        cls = loss_cls(torch.cat([type_probs, topic_probs], dim=-1), targets)
        if selections is None:
            selections = [teacher_selection(ex, model.n_types) for ex in batch]
        bridges = torch.stack([bridge_state(s, model.keyword_emb) for s in selections])
        ones = torch.ones(bridges.shape[:2], dtype=torch.bool)
        memory = torch.cat([bridges, enc_h.hidden], dim=1)
        memory_mask = torch.cat([ones, enc_h.mask], dim=1)
    else:
        cls = torch.zeros((), dtype=type_probs.dtype)
        memory, memory_mask = enc_h.hidden, enc_h.mask

    bias = None
    if options.use_csm:
        bias = options.bias_scale * model.bias_head(pooled).logits

    refs = [list(ex.reference_ids) for ex in batch]
    dec_in, dec_mask = pad_sequences([[Vocabulary.bos_id] + r[:-1] for r in refs])
    ref_out, _ = pad_sequences(refs)
    logits = model.backbone.decode_sequence(dec_in, dec_mask, memory, memory_mask,
                                            logit_bias=bias)
    return BatchLosses(lm=loss_lm(logits, ref_out), cls=cls)


def _warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr


def train_step(model: DialogueModel, optimizer: torch.optim.Optimizer,
               batch: list[TrainingExample], state: TrainState,
               config: OptimizerConfig, options: RunOptions,
               warmup_steps: int,
               selections: list[BridgeSelection] | None = None) -> TrainState:
    """One optimization step: forward, clip, AdamW update, schedule advance."""
    model.train()
    state.step += 1
    state.lr = _warmup_lr(config.learning_rate, state.step, warmup_steps)
    for group in optimizer.param_groups:
        group["lr"] = state.lr

    losses = batch_forward(model, batch, options, selections=selections)
    total = losses.total
    if not torch.isfinite(total):
        raise RuntimeError(
            f"non-finite loss at step {state.step}: lm={float(losses.lm)} "
            f"cls={float(losses.cls)}")
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
    optimizer.step()

    state.loss_lm = losses.lm.detach().item()
    state.loss_cls = losses.cls.detach().item()
    state.loss_total = total.detach().item()
    state.grad_norm = float(grad_norm)
    return state


def _dev_loss(model: DialogueModel, examples: list[TrainingExample],
              options: RunOptions, batch_size: int) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i: i + batch_size]
            total += float(batch_forward(model, chunk, options).total) * len(chunk)
            count += len(chunk)
    return total / max(count, 1)


@dataclass
class FitResult:
    checkpoint: Path
    history: list[dict] = field(default_factory=list)
    state: TrainState = field(default_factory=TrainState)


def fit(split: DatasetSplit, model: DialogueModel, vocab: Vocabulary,
        config: OptimizerConfig, options: RunOptions, out_dir: str | Path,
        resume: bool = False, log_every: int = 10) -> FitResult:
    """Train on split.train, track dev loss per epoch, keep the best checkpoint."""
    if not split.train:
        raise ValueError("training split is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoint"
    inventory = split.inventory

    def encode_all(samples):
        return [
            encode_sample(s, vocab, inventory, m=options.m,
                          max_src_len=model.config.max_src_len,
                          max_tgt_len=model.config.max_tgt_len)
            for s in samples
        ]

    train_ex = encode_all(split.train)
    dev_ex = encode_all(split.dev) if split.dev else []

    state = TrainState()
    if resume and (out / "train_state.json").exists():
        saved = json.loads((out / "train_state.json").read_text())
        state = TrainState(**saved)

    steps_per_epoch = math.ceil(len(train_ex) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    if total_steps and config.warmup_steps >= total_steps:
        raise ValueError(f"warmup_steps={config.warmup_steps} must be below "
                         f"total steps={total_steps}")
    warmup = (config.warmup_steps or max(1, int(0.05 * total_steps))) if total_steps else 0

    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate,
                                  weight_decay=config.weight_decay)
    opt_state_path = out / "opt_state.pt"
    if resume and opt_state_path.exists():
        optimizer.load_state_dict(torch.load(opt_state_path, weights_only=True))

    rng = random.Random(config.seed)
    torch.manual_seed(config.seed)
    history: list[dict] = []
    log_path = out / "train_log.jsonl"
    log_fh = open(log_path, "a" if resume else "w", encoding="utf-8")

    save_checkpoint(model, ckpt_dir, vocab, inventory)  # epochs=0 still yields one
    try:
        start_epoch = state.epoch
        for epoch in range(start_epoch, config.epochs):
            state.epoch = epoch
            order = list(range(len(train_ex)))
            rng.shuffle(order)
            use_model_picks = (config.teacher_epochs is not None
                               and epoch >= config.teacher_epochs and options.use_ikb)
            for i in range(0, len(order), config.batch_size):
                batch = [train_ex[j] for j in order[i: i + config.batch_size]]
                selections = None
                if use_model_picks:
                    selections = _model_hard_selections(model, batch, options, vocab)
                state = train_step(model, optimizer, batch, state, config, options,
                                   warmup_steps=warmup, selections=selections)
                if state.step % log_every == 0 or state.step == 1:
                    log_fh.write(json.dumps({
                        "step": state.step, "lr": state.lr,
                        "loss_lm": state.loss_lm, "loss_cls": state.loss_cls,
                        "loss_total": state.loss_total, "grad_norm": state.grad_norm,
                    }) + "\n")
                    log_fh.flush()
            dev_loss = _dev_loss(model, dev_ex, options, config.batch_size) if dev_ex \
                else state.loss_total
            history.append({"epoch": epoch, "dev_loss": dev_loss,
                            "train_loss": state.loss_total})
            if dev_loss <= state.best_dev_loss:
                state.best_dev_loss = dev_loss
                save_checkpoint(model, ckpt_dir, vocab, inventory)
            state.epoch = epoch + 1
            (out / "train_state.json").write_text(json.dumps(state.to_json()))
            torch.save(optimizer.state_dict(), opt_state_path)
    finally:
        log_fh.close()
    (out / "history.json").write_text(json.dumps(history, indent=2))
    if split.dev:
        from .metrics import evaluate_split

        report = evaluate_split(split.dev, model, vocab, split, options,
                                split_name="dev")
        report.save(out / "dev_report.json")
    return FitResult(checkpoint=ckpt_dir, history=history, state=state)


def _model_hard_selections(model: DialogueModel, batch: list[TrainingExample],
                           options: RunOptions, vocab: Vocabulary,
                           ) -> list[BridgeSelection]:
    """Scheduled-sampling picks: the model's own top-m keywords, gradient-free."""
    from .generator import build_context

    selections = []
    with torch.no_grad():
        for ex in batch:
            ctx = build_context(model, ex, vocab, options)
            selections.append(
                select_hard(ctx.distribution,
                            min(options.m, model.n_types, model.n_topics)))
    return selections


def grad_check(model: DialogueModel, batch: list[TrainingExample],
               options: RunOptions, epsilon: float = 1e-5, n_params: int = 50,
               seed: int = 0) -> tuple[float, list[dict]]:
    """Compare analytic gradients of L_total against central differences.

    The model must be in float64; coordinates are sampled across every
    parameter group, preferring ones with non-zero analytic gradient.
    Returns (max relative error, per-coordinate records).
    """
    if model.dtype != torch.float64:
        raise ValueError("gradient checking requires a float64 model")
    model.eval()  # dropout must be off for finite differences to be meaningful

    def compute_loss() -> Tensor:
        return batch_forward(model, batch, options).total

    model.zero_grad(set_to_none=True)
    compute_loss().backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None
                    else torch.zeros_like(p))
             for name, p in model.named_parameters()}

    rng = random.Random(seed)
    groups = model.parameter_groups()
    params = dict(model.named_parameters())
    coords: list[tuple[str, int]] = []
    group_names = [g for g, names in groups.items() if names]
    for group in group_names:  # at least one coordinate per live group
        coords.append(_sample_coord(rng, groups[group], params, grads))
    while len(coords) < n_params:
        group = rng.choice(group_names)
        coords.append(_sample_coord(rng, groups[group], params, grads))

    records = []
    max_rel = 0.0
    with torch.no_grad():
        for name, flat_idx in coords:
            p = params[name]
            original = float(p.view(-1)[flat_idx])
            p.view(-1)[flat_idx] = original + epsilon
            loss_plus = float(compute_loss())
            p.view(-1)[flat_idx] = original - epsilon
            loss_minus = float(compute_loss())
            p.view(-1)[flat_idx] = original
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            analytic = float(grads[name].view(-1)[flat_idx])
            scale = max(abs(analytic), abs(numeric))
            rel = 0.0 if scale <= 1e-8 else abs(analytic - numeric) / scale
            records.append({"param": name, "index": flat_idx, "analytic": analytic,
                            "numeric": numeric, "rel_err": rel})
            max_rel = max(max_rel, rel)
    return max_rel, records


def _sample_coord(rng: random.Random, names: list[str], params: dict[str, Tensor],
                  grads: dict[str, Tensor]) -> tuple[str, int]:
    name = rng.choice(names)
    g = grads[name].view(-1)
    live = torch.nonzero(g.abs() > 0).view(-1)
    if len(live):
        return name, int(live[rng.randrange(len(live))])
    return name, rng.randrange(params[name].numel())
