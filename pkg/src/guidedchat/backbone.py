"""From-scratch transformer encoder-decoder.

Pre-norm blocks, learned positional embeddings, weight-tied output projection.
The decoder exposes the two augmentation points the rest of the system needs:
an arbitrary cross-attention memory (any number of extra rows may be packed in
front of the encoder states) and an additive per-step logit bias.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import Tensor, nn

from .corpus import Vocabulary

NEG_INF = float("-inf")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_width: int = 128
    vocab_size: int = 512
    max_src_len: int = 256
    max_tgt_len: int = 100
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        positive = {
            "d": self.d, "n_layers": self.n_layers, "n_heads": self.n_heads,
            "ffn_width": self.ffn_width, "vocab_size": self.vocab_size,
            "max_src_len": self.max_src_len, "max_tgt_len": self.max_tgt_len,
        }
        for name, value in positive.items():
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(obj: dict) -> "ModelConfig":
        return ModelConfig(**obj)


@dataclass
class EncoderState:
    """Hidden states (..., L, d) with a boolean validity mask (..., L)."""

    hidden: Tensor
    mask: Tensor

    def __post_init__(self) -> None:
        if not torch.isfinite(self.hidden).all():
            raise ValueError("encoder state contains non-finite values")


@dataclass
class DecoderStepState:
    """Incremental decoding memo: final hidden of the last step plus KV cache."""

    last_hidden: Tensor
    length: int
    self_kv: list[tuple[Tensor, Tensor]] = field(repr=False, default_factory=list)
    cross_kv: list[tuple[Tensor, Tensor]] = field(repr=False, default_factory=list)


def pad_sequences(seqs: list[list[int]], pad_id: int = Vocabulary.pad_id,
                  min_len: int = 1) -> tuple[Tensor, Tensor]:
    """Stack variable-length id lists into (B, L) ids and a (B, L) bool mask."""
    width = max(min_len, max((len(s) for s in seqs), default=0))
    ids = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.bool)
    for i, s in enumerate(seqs):
        if s:
            ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
            mask[i, : len(s)] = True
    return ids, mask


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

    def project_kv(self, source: Tensor) -> tuple[Tensor, Tensor]:
        return self._split(self.k_proj(source)), self._split(self.v_proj(source))

    def attend(self, query: Tensor, k: Tensor, v: Tensor,
               attn_mask: Tensor | None) -> Tensor:
        """query (B, Tq, d); k/v (B, H, Tk, hd); attn_mask broadcastable (B, 1, Tq, Tk)."""
        q = self._split(self.q_proj(query))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if attn_mask is not None:
            scores = scores.masked_fill(~attn_mask, NEG_INF)
        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = weights @ v
        b, _, t, _ = out.shape
        return self.out_proj(out.transpose(1, 2).reshape(b, t, -1))

    def forward(self, query: Tensor, source: Tensor, attn_mask: Tensor | None) -> Tensor:
        k, v = self.project_kv(source)
        return self.attend(query, k, v, attn_mask)


class FeedForward(nn.Module):
    def __init__(self, d: int, width: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d, width), nn.GELU(), nn.Dropout(dropout), nn.Linear(width, d))

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d)
        self.attn = MultiHeadAttention(cfg.d, cfg.n_heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffn_width, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor, attn_mask: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h, attn_mask))
        return x + self.drop(self.ffn(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d)
        self.self_attn = MultiHeadAttention(cfg.d, cfg.n_heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.d)
        self.cross_attn = MultiHeadAttention(cfg.d, cfg.n_heads, cfg.dropout)
        self.norm3 = nn.LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffn_width, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)


class EncoderDecoder(nn.Module):
    """Backbone; all forward paths accept batched (B, L) id tensors."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d)
        self.pos_src = nn.Embedding(cfg.max_src_len, cfg.d)
        self.pos_tgt = nn.Embedding(cfg.max_tgt_len + 1, cfg.d)
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_layers))
        self.enc_norm = nn.LayerNorm(cfg.d)
        self.dec_norm = nn.LayerNorm(cfg.d)
        self.out_bias = nn.Parameter(torch.zeros(cfg.vocab_size))
        self.drop = nn.Dropout(cfg.dropout)

    # output projection is weight-tied to the input embedding
    def project_logits(self, hidden: Tensor) -> Tensor:
        return hidden @ self.tok_emb.weight.t() + self.out_bias

    def encode(self, ids: Tensor, mask: Tensor) -> EncoderState:
        """ids/mask (B, L) -> EncoderState with padded rows zeroed."""
        if ids.size(-1) > self.cfg.max_src_len:
            raise ValueError(
                f"source length {ids.size(-1)} exceeds max_src_len={self.cfg.max_src_len}")
        pos = torch.arange(ids.size(-1), device=ids.device)
        x = self.drop(self.tok_emb(ids) + self.pos_src(pos))
        attn_mask = self._padding_attn_mask(mask)
        for layer in self.enc_layers:
            x = layer(x, attn_mask)
        x = self.enc_norm(x)
        return EncoderState(hidden=x * mask.unsqueeze(-1).to(x.dtype), mask=mask)

    @staticmethod
    def _padding_attn_mask(key_mask: Tensor) -> Tensor:
        """(B, Lk) bool -> (B, 1, 1, Lk); rows with no valid key attend everywhere
        (they are masked out downstream) to keep the softmax finite."""
        m = key_mask[:, None, None, :]
        return m | ~m.any(dim=-1, keepdim=True)

    def _decoder_pass(self, x: Tensor, self_mask: Tensor | None, memory: Tensor,
                      memory_attn: Tensor,
                      state: DecoderStepState | None = None) -> tuple[Tensor, DecoderStepState]:
        """Run decoder layers; with `state`, x holds only the new suffix."""
        new_state = DecoderStepState(last_hidden=x.new_zeros(()), length=0)
        for i, layer in enumerate(self.dec_layers):
            h = layer.norm1(x)
            k, v = layer.self_attn.project_kv(h)
            if state is not None and state.self_kv:
                pk, pv = state.self_kv[i]
                k, v = torch.cat([pk, k], dim=2), torch.cat([pv, v], dim=2)
            new_state.self_kv.append((k, v))
            x = x + layer.drop(layer.self_attn.attend(h, k, v, self_mask))

            if state is not None and state.cross_kv:
                ck, cv = state.cross_kv[i]
            else:
                ck, cv = layer.cross_attn.project_kv(memory)
            new_state.cross_kv.append((ck, cv))
            x = x + layer.drop(layer.cross_attn.attend(layer.norm2(x), ck, cv, memory_attn))

            x = x + layer.drop(layer.ffn(layer.norm3(x)))
        x = self.dec_norm(x)
        new_state.last_hidden = x[:, -1, :]
        return x, new_state

    def decode_sequence(self, dec_input: Tensor, dec_mask: Tensor, memory: Tensor,
                        memory_mask: Tensor, logit_bias: Tensor | None = None) -> Tensor:
        """Teacher-forced pass. dec_input (B, T) -> logits (B, T, V)."""
        b, t = dec_input.shape
        if t > self.cfg.max_tgt_len + 1:
            raise ValueError(f"target length {t} exceeds max_tgt_len={self.cfg.max_tgt_len}")
        _check_bias(logit_bias)
        pos = torch.arange(t, device=dec_input.device)
        x = self.drop(self.tok_emb(dec_input) + self.pos_tgt(pos))
        causal = torch.tril(torch.ones(t, t, dtype=torch.bool, device=dec_input.device))
        self_mask = causal[None, None] & self._padding_attn_mask(dec_mask)
        hidden, _ = self._decoder_pass(x, self_mask, memory,
                                       self._padding_attn_mask(memory_mask))
        logits = self.project_logits(hidden)
        if logit_bias is not None:
            logits = logits + logit_bias[:, None, :]
        return logits

    def decode_step(self, prefix: Tensor, memory: Tensor, memory_mask: Tensor,
                    logit_bias: Tensor | None = None,
                    state: DecoderStepState | None = None) -> tuple[Tensor, DecoderStepState]:
        """Next-token logits for a (B, T) prefix.

        With `state` from the previous call only the last prefix token is
        processed against the cached keys/values.
        """
        _check_bias(logit_bias)
        b, t = prefix.shape
        if state is not None and state.length != t - 1:
            raise ValueError(f"cache holds {state.length} steps, prefix has {t}")
        if state is None:
            x_ids, pos0 = prefix, 0
        else:
            x_ids, pos0 = prefix[:, -1:], t - 1
        pos = torch.arange(pos0, t, device=prefix.device)
        x = self.drop(self.tok_emb(x_ids) + self.pos_tgt(pos))
        if state is None:
            causal = torch.tril(torch.ones(t, t, dtype=torch.bool, device=prefix.device))
            self_mask = causal[None, None]
        else:
            self_mask = None  # single query over t keys: everything visible
        hidden, new_state = self._decoder_pass(
            x, self_mask, memory, self._padding_attn_mask(memory_mask), state=state)
        new_state.length = t
        logits = self.project_logits(new_state.last_hidden)
        if logit_bias is not None:
            logits = logits + logit_bias
        return logits, new_state


def _check_bias(logit_bias: Tensor | None) -> None:
    if logit_bias is not None and not torch.isfinite(logit_bias).all():
        raise ValueError("logit bias contains non-finite values")


def init_model(cfg: ModelConfig) -> EncoderDecoder:
    """Deterministically initialized backbone (seeded by cfg.seed)."""
    torch.manual_seed(cfg.seed)
    return EncoderDecoder(cfg)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
