from __future__ import annotations

import pytest
import torch

from guidedchat.backbone import (
    EncoderDecoder,
    ModelConfig,
    init_model,
    pad_sequences,
    parameter_count,
)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(d=32, n_layers=2, n_heads=4, ffn_width=64, vocab_size=101,
                max_src_len=40, max_tgt_len=24, dropout=0.0, seed=11)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def model():
    m = init_model(tiny_config())
    m.eval()
    return m


def encode_ids(model, ids):
    batch, mask = pad_sequences([ids])
    return model.backbone.encode(batch, mask) if hasattr(model, "backbone") \
        else model.encode(batch, mask)


class TestConfig:
    def test_divisibility_violation(self):
        with pytest.raises(ValueError, match="divisible"):
            tiny_config(d=65)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            tiny_config(n_layers=0)

    def test_round_trip(self):
        cfg = tiny_config()
        assert ModelConfig.from_json(cfg.to_json()) == cfg


class TestInit:
    def test_same_seed_bitwise_identical(self):
        a = init_model(tiny_config(seed=3))
        b = init_model(tiny_config(seed=3))
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self):
        a = init_model(tiny_config(seed=3))
        b = init_model(tiny_config(seed=4))
        assert any(not torch.equal(pa, pb)
                   for pa, pb in zip(a.parameters(), b.parameters()))

    def test_parameter_count_closed_form(self):
        # Shape oracle computed by hand from the architecture:
        #   tok_emb V*d (output projection is tied), pos_src S*d, pos_tgt (T+1)*d,
        #   out_bias V, per encoder layer 4(d^2+d) + 2*2d + (d*f + f) + (f*d + d),
        #   per decoder layer 8(d^2+d) + 3*2d + ffn, plus one final LayerNorm each.
        d, f, v, s, t, layers = 64, 128, 512, 40, 24, 2
        cfg = tiny_config(d=d, ffn_width=f, vocab_size=v, max_src_len=s,
                          max_tgt_len=t, n_layers=layers, n_heads=4)
        ffn = d * f + f + f * d + d
        enc_layer = 4 * (d * d + d) + 2 * 2 * d + ffn
        dec_layer = 8 * (d * d + d) + 3 * 2 * d + ffn
        expected = (
            v * d + s * d + (t + 1) * d + v
            + layers * (enc_layer + dec_layer)
            + 2 * 2 * d
        )
        assert parameter_count(init_model(cfg)) == expected


class TestEncode:
    def test_shape_contract(self, model):
        state = encode_ids(model, [5, 6, 7, 8, 9, 10, 11])
        assert state.hidden.shape == (1, 7, 32)
        assert state.mask.all()

    def test_all_pad_input_fully_masked(self, model):
        ids = torch.zeros(1, 4, dtype=torch.long)
        mask = torch.zeros(1, 4, dtype=torch.bool)
        state = model.encode(ids, mask)
        assert not state.mask.any()
        assert torch.all(state.hidden == 0)  # padded rows are zeroed

    def test_position_encoding_active(self, model):
        a = encode_ids(model, [5, 6, 7, 8]).hidden
        b = encode_ids(model, [6, 5, 7, 8]).hidden
        assert not torch.allclose(a, b)

    def test_overlength_rejected(self, model):
        with pytest.raises(ValueError, match="max_src_len"):
            encode_ids(model, list(range(1, 60)))

    def test_padded_batch_matches_unpadded(self, model):
        short = encode_ids(model, [5, 6, 7])
        ids, mask = pad_sequences([[5, 6, 7], [5, 6, 7, 8, 9, 10]])
        batched = model.encode(ids, mask)
        assert torch.allclose(short.hidden[0], batched.hidden[0, :3], atol=1e-6)


class TestDecodeStep:
    @pytest.fixture()
    def memory(self, model):
        state = encode_ids(model, [5, 6, 7, 8, 9, 10, 11])
        return state.hidden, state.mask

    def test_zero_bias_is_identity(self, model, memory):
        prefix = torch.tensor([[1, 9, 12]])
        base, _ = model.decode_step(prefix, *memory)
        biased, _ = model.decode_step(prefix, *memory,
                                      logit_bias=torch.zeros(1, 101))
        assert torch.equal(base, biased)

    def test_bias_dominance(self, model, memory):
        bias = torch.zeros(1, 101)
        bias[0, 37] = 1e9
        logits, _ = model.decode_step(torch.tensor([[1]]), *memory, logit_bias=bias)
        assert int(torch.argmax(logits)) == 37

    def test_nonfinite_bias_rejected(self, model, memory):
        bias = torch.full((1, 101), float("nan"))
        with pytest.raises(ValueError, match="non-finite"):
            model.decode_step(torch.tensor([[1]]), *memory, logit_bias=bias)

    def test_extra_memory_rows_change_logits_unless_masked(self, model, memory):
        hidden, mask = memory
        prefix = torch.tensor([[1, 9]])
        base, _ = model.decode_step(prefix, hidden, mask)
        extra = torch.cat([torch.randn(1, 2, 32), hidden], dim=1)
        on_mask = torch.cat([torch.ones(1, 2, dtype=torch.bool), mask], dim=1)
        off_mask = torch.cat([torch.zeros(1, 2, dtype=torch.bool), mask], dim=1)
        with_rows, _ = model.decode_step(prefix, extra, on_mask)
        without_rows, _ = model.decode_step(prefix, extra, off_mask)
        assert not torch.allclose(base, with_rows, atol=1e-6)
        assert torch.allclose(base, without_rows, atol=1e-6)

    def test_softmax_sums_to_one(self, model, memory):
        torch.manual_seed(0)
        with torch.no_grad():
            for step in range(5):
                prefix = torch.cat([torch.tensor([[1]]),
                                    torch.randint(5, 100, (1, step))], dim=1)
                logits, _ = model.decode_step(prefix, *memory)
                assert abs(float(torch.softmax(logits, dim=-1).sum()) - 1.0) < 1e-6

    def test_incremental_matches_full(self, model, memory):
        torch.manual_seed(1)
        ids = [1] + torch.randint(5, 100, (10,)).tolist()
        state = None
        for t in range(1, len(ids) + 1):
            prefix = torch.tensor([ids[:t]])
            cached, state = model.decode_step(prefix, *memory, state=state)
            full, _ = model.decode_step(prefix, *memory)
            assert torch.allclose(cached, full, atol=1e-5), f"step {t}"

    def test_stale_cache_rejected(self, model, memory):
        prefix = torch.tensor([[1, 9, 12]])
        _, state = model.decode_step(prefix, *memory)
        with pytest.raises(ValueError, match="cache"):
            model.decode_step(torch.tensor([[1, 9, 12, 13, 14]]), *memory, state=state)


class TestDecodeSequence:
    def test_matches_stepwise(self, model):
        enc = encode_ids(model, [5, 6, 7, 8])
        dec = torch.tensor([[1, 20, 30, 40]])
        dec_mask = torch.ones_like(dec, dtype=torch.bool)
        seq_logits = model.decode_sequence(dec, dec_mask, enc.hidden, enc.mask)
        state = None
        for t in range(1, 5):
            step_logits, state = model.decode_step(dec[:, :t], enc.hidden, enc.mask,
                                                   state=state)
            assert torch.allclose(seq_logits[0, t - 1], step_logits[0], atol=1e-5)

    def test_eval_mode_deterministic(self, model):
        enc = encode_ids(model, [5, 6, 7, 8])
        dec = torch.tensor([[1, 20, 30]])
        dec_mask = torch.ones_like(dec, dtype=torch.bool)
        a = model.decode_sequence(dec, dec_mask, enc.hidden, enc.mask)
        b = model.decode_sequence(dec, dec_mask, enc.hidden, enc.mask)
        assert torch.equal(a, b)

    def test_dropout_requires_train_mode(self):
        m = init_model(tiny_config(dropout=0.3))
        m.train()
        ids, mask = pad_sequences([[5, 6, 7, 8]])
        torch.manual_seed(0)
        a = m.encode(ids, mask).hidden
        b = m.encode(ids, mask).hidden
        assert not torch.equal(a, b)
