from __future__ import annotations

import numpy as np
import pytest
import torch

from guidedchat.backbone import EncoderState
from guidedchat.bridging import (
    BridgeSelection,
    Fusion,
    KeywordDistribution,
    KeywordEmbeddings,
    KeywordHeads,
    bridge_state,
    predict_keywords,
    select_hard,
    select_soft,
    teacher_selection,
)
from guidedchat.corpus import TrainingExample

D = 16
XA = 6
XT = 13


def dist(type_probs, topic_probs=None) -> KeywordDistribution:
    if topic_probs is None:
        topic_probs = type_probs
    return KeywordDistribution(type_probs=np.asarray(type_probs, dtype=np.float64),
                               topic_probs=np.asarray(topic_probs, dtype=np.float64))


def random_dist(rng, n_types=XA, n_topics=XT) -> KeywordDistribution:
    return dist(rng.random(n_types), rng.random(n_topics))


class TestFusion:
    def test_passthrough_gate_against_oracle(self):
        torch.manual_seed(4)
        fusion = Fusion(D).eval()
        with torch.no_grad():
            fusion.gate_logits.fill_(30.0)  # sigmoid saturates to 1: pass-through
        rows = torch.randn(1, 3, D)
        ctx = EncoderState(hidden=rows, mask=torch.ones(1, 3, dtype=torch.bool))
        zero = torch.zeros(1, D)
        out = fusion(ctx, zero, zero)
        # straight-line oracle: mean -> context projection -> output projection
        mean = rows[0].mean(dim=0).numpy()
        w_ctx = fusion.context_proj.weight.detach().numpy()
        w_out = fusion.out_proj.weight.detach().numpy()
        assert np.allclose(out[0].detach().numpy(), w_out @ (w_ctx @ mean), atol=1e-5)

    def test_initial_gates_at_half(self):
        fusion = Fusion(D)
        assert torch.all(torch.sigmoid(fusion.gate_logits) == 0.5)

    def test_deterministic(self):
        torch.manual_seed(4)
        fusion = Fusion(D).eval()
        ctx = EncoderState(hidden=torch.randn(1, 4, D),
                           mask=torch.ones(1, 4, dtype=torch.bool))
        f_k, f_u = torch.randn(1, D), torch.randn(1, D)
        assert torch.equal(fusion(ctx, f_k, f_u), fusion(ctx, f_k, f_u))

    def test_single_row_context(self):
        torch.manual_seed(4)
        fusion = Fusion(D).eval()
        row = torch.randn(1, 1, D)
        dup = row.repeat(1, 3, 1)
        mask1 = torch.ones(1, 1, dtype=torch.bool)
        mask3 = torch.ones(1, 3, dtype=torch.bool)
        f_k, f_u = torch.randn(1, D), torch.randn(1, D)
        a = fusion(EncoderState(hidden=row, mask=mask1), f_k, f_u)
        b = fusion(EncoderState(hidden=dup, mask=mask3), f_k, f_u)
        assert torch.allclose(a, b, atol=1e-6)

    def test_fully_masked_errors(self):
        fusion = Fusion(D)
        ctx = EncoderState(hidden=torch.randn(1, 2, D),
                           mask=torch.zeros(1, 2, dtype=torch.bool))
        with pytest.raises(ValueError, match="fully masked"):
            fusion(ctx, torch.zeros(1, D), torch.zeros(1, D))


class TestPredictKeywords:
    def test_zero_everything_gives_half(self):
        heads = KeywordHeads(D, XA, XT)
        with torch.no_grad():
            for p in heads.parameters():
                p.zero_()
        out = predict_keywords(heads, torch.zeros(1, D))
        assert np.allclose(out.type_probs, 0.5)
        assert np.allclose(out.topic_probs, 0.5)

    def test_matches_affine_logistic_oracle(self):
        torch.manual_seed(8)
        heads = KeywordHeads(D, XA, XT).eval()
        fused = torch.randn(1, D)
        out = predict_keywords(heads, fused)
        w = heads.cls_type.weight.detach().numpy()
        b = heads.cls_type.bias.detach().numpy()
        logits = w @ fused[0].numpy() + b
        assert np.allclose(out.type_probs, 1.0 / (1.0 + np.exp(-logits)), atol=1e-6)

    def test_shapes_match_inventory(self):
        heads = KeywordHeads(D, 13, 640)
        out = predict_keywords(heads, torch.zeros(1, D))
        assert out.type_probs.shape == (13,)
        assert out.topic_probs.shape == (640,)

    def test_probabilities_strictly_inside_unit_interval(self):
        torch.manual_seed(0)
        heads = KeywordHeads(D, XA, XT)
        for _ in range(20):
            out = predict_keywords(heads, 100.0 * torch.randn(1, D))
            for arr in (out.type_probs, out.topic_probs):
                assert np.all(arr > 0.0) and np.all(arr < 1.0)


class TestSelectHard:
    def test_sorted_oracle(self):
        sel = select_hard(dist([0.1, 0.9, 0.5]), m=2)
        assert [i for i, _ in sel.type_picks] == [1, 2]
        assert all(w == 1.0 for _, w in sel.type_picks)

    def test_full_selection(self):
        sel = select_hard(dist([0.3, 0.2, 0.8]), m=3)
        assert [i for i, _ in sel.type_picks] == [0, 1, 2]

    def test_tie_break_ascending_id(self):
        sel = select_hard(dist([0.5, 0.5, 0.5]), m=2)
        assert [i for i, _ in sel.type_picks] == [0, 1]

    def test_out_of_range_m(self):
        with pytest.raises(ValueError, match="m must be"):
            select_hard(dist([0.5, 0.5]), m=3)
        with pytest.raises(ValueError, match="m must be"):
            select_hard(dist([0.5, 0.5]), m=0)

    def test_brute_force_sort_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            d = random_dist(rng)
            m = int(rng.integers(1, XA + 1))
            sel = select_hard(d, m)
            # oracle: exhaustively rank (prob, -id) and take the top m ids
            order = sorted(range(XA), key=lambda j: (-d.type_probs[j], j))
            assert [i for i, _ in sel.type_picks] == sorted(order[:m])

    def test_monotone_under_logit_raise(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            d = random_dist(rng)
            m = int(rng.integers(1, XA + 1))
            picked = {i for i, _ in select_hard(d, m).type_picks}
            j = int(rng.integers(0, XA))
            boosted = d.type_probs.copy()
            boosted[j] = min(1.0, boosted[j] + rng.random())
            after = {i for i, _ in select_hard(dist(boosted, d.topic_probs), m).type_picks}
            if j in picked:
                assert j in after


class TestSelectSoft:
    def test_filter_oracle(self):
        sel = select_soft(dist([0.1, 0.9, 0.5]), 0.2)
        assert sel.type_picks == [(1, 0.9), (2, 0.5)]
        assert not sel.fallback

    def test_threshold_zero_selects_all(self):
        rng = np.random.default_rng(11)
        d = random_dist(rng)
        sel = select_soft(d, 0.0)
        assert {i for i, _ in sel.type_picks} == set(range(XA))
        assert {i for i, _ in sel.topic_picks} == set(range(XT))
        for i, w in sel.type_picks:
            assert w == d.type_probs[i]

    def test_inclusive_threshold(self):
        sel = select_soft(dist([0.2, 0.1999]), 0.2)
        assert sel.type_picks == [(0, 0.2)]

    def test_empty_set_falls_back_to_argmax(self):
        sel = select_soft(dist([0.1, 0.3, 0.2]), 0.9)
        assert sel.type_picks == [(1, 0.3)]
        assert sel.fallback

    def test_invalid_threshold(self):
        with pytest.raises(ValueError, match="threshold"):
            select_soft(dist([0.5]), 1.5)

    def test_hard_subset_of_soft_when_delta_below_mth(self):
        rng = np.random.default_rng(29)
        for _ in range(300):
            d = random_dist(rng)
            m = int(rng.integers(1, XA + 1))
            hard = select_hard(d, m)
            mth = sorted(d.type_probs, reverse=True)[m - 1]
            delta = mth * rng.random()
            soft = select_soft(d, delta)
            assert {i for i, _ in hard.type_picks} <= {i for i, _ in soft.type_picks}


class TestBridgeState:
    @pytest.fixture()
    def emb(self):
        torch.manual_seed(21)
        return KeywordEmbeddings(XA, XT, D)

    def test_single_pick_returns_raw_embedding(self, emb):
        sel = BridgeSelection("hard", [(2, 1.0)], [(7, 1.0)])
        out = bridge_state(sel, emb)
        assert out.shape == (2, D)
        assert torch.equal(out[0], emb.emb_type.weight[2])
        assert torch.equal(out[1], emb.emb_topic.weight[7])

    def test_dominating_row_wins(self, emb):
        with torch.no_grad():
            emb.emb_type.weight[0] = 1.0
            emb.emb_type.weight[1] = -1.0
        sel = BridgeSelection("hard", [(0, 1.0), (1, 1.0)], [(0, 1.0)])
        out = bridge_state(sel, emb)
        assert torch.equal(out[0], emb.emb_type.weight[0])

    def test_triple_loop_max_oracle(self, emb):
        rng = np.random.default_rng(31)
        table_a = emb.emb_type.weight.detach().numpy()
        table_t = emb.emb_topic.weight.detach().numpy()
        for _ in range(50):
            na = int(rng.integers(1, XA + 1))
            nt = int(rng.integers(1, XT + 1))
            tp = [(int(i), float(rng.random())) for i in rng.choice(XA, na, replace=False)]
            kp = [(int(i), float(rng.random())) for i in rng.choice(XT, nt, replace=False)]
            out = bridge_state(BridgeSelection("soft", tp, kp), emb).detach().numpy()
            for row, picks, table in ((0, tp, table_a), (1, kp, table_t)):
                for c in range(D):
                    best = -np.inf
                    for i, w in picks:
                        best = max(best, w * table[i, c])
                    assert abs(out[row, c] - best) <= 1e-7

    def test_permutation_invariance(self, emb):
        rng = np.random.default_rng(37)
        picks = [(int(i), float(rng.random())) for i in range(XA)]
        base = bridge_state(BridgeSelection("soft", picks, picks[:5]), emb)
        for _ in range(10):
            rng.shuffle(picks)
            out = bridge_state(BridgeSelection("soft", list(picks), picks[:5]), emb)
            assert torch.equal(out[0], base[0])

    def test_empty_picks_rejected(self, emb):
        with pytest.raises(ValueError, match="empty"):
            bridge_state(BridgeSelection("hard", [], [(0, 1.0)]), emb)


class TestTeacherSelection:
    def _example(self, targets: np.ndarray) -> TrainingExample:
        return TrainingExample(knowledge_ids=(5,), profile_ids=(), context_ids=(6,),
                               reference_ids=(7, 2), keyword_targets=targets)

    def test_gold_positives_become_picks(self):
        targets = np.zeros(XA + XT, dtype=np.float32)
        targets[[3, 5]] = 1.0
        targets[XA + 10] = 1.0
        targets[XA + 12] = 1.0
        sel = teacher_selection(self._example(targets), n_types=XA)
        assert sel.type_picks == [(3, 1.0), (5, 1.0)]
        assert sel.topic_picks == [(10, 1.0), (12, 1.0)]

    def test_single_pair(self):
        targets = np.zeros(XA + XT, dtype=np.float32)
        targets[0] = 1.0
        targets[XA] = 1.0
        sel = teacher_selection(self._example(targets), n_types=XA)
        assert len(sel.type_picks) == len(sel.topic_picks) == 1

    def test_matches_equivalent_hard_selection(self):
        torch.manual_seed(3)
        emb = KeywordEmbeddings(XA, XT, D)
        targets = np.zeros(XA + XT, dtype=np.float32)
        targets[[1, 4]] = 1.0
        targets[[XA + 2, XA + 9]] = 1.0
        teacher = teacher_selection(self._example(targets), n_types=XA)
        manual = BridgeSelection("hard", [(1, 1.0), (4, 1.0)], [(2, 1.0), (9, 1.0)])
        assert torch.equal(bridge_state(teacher, emb), bridge_state(manual, emb))

    def test_no_positives_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            teacher_selection(self._example(np.zeros(XA + XT, dtype=np.float32)),
                              n_types=XA)
