"""Evaluation metrics and split-level aggregation.

All scores are kept as fractions in [0, 1] (perplexity excepted); the text
table renders Word F1, Knowledge F1 and Failure as percentages to match the
conventional column format (PPL, W. F1, BLEU-1/2, DIST-1/2, K. F1, Fail.).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import DatasetSplit, DialogueSample, Vocabulary, encode_sample, tokenize
from .generator import RunOptions, build_context, generate, score_reference
from .model import DialogueModel

DEFAULT_STOPWORDS = frozenset(
    """a an and are as at be but by for from has have i in is it its me my of on
    or so that the this to was we what when who will with you your""".split()
)


def perplexity(nlls: list[list[float]]) -> float:
    """exp(total NLL / total token count) over per-utterance NLL lists."""
    total = sum(sum(seq) for seq in nlls)
    count = sum(len(seq) for seq in nlls)
    if count == 0:
        raise ValueError("perplexity needs at least one scored token")
    return math.exp(total / count)


def _multiset_f1(generated: list[str], reference: list[str]) -> float:
    if not generated or not reference:
        return 0.0
    overlap = sum((Counter(generated) & Counter(reference)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(generated)
    recall = overlap / len(reference)
    return 2 * precision * recall / (precision + recall)


def word_f1(generated: list[str], reference: list[str]) -> float:
    """F1 of multiset token overlap between one generated and one reference utterance."""
    if not reference:
        raise ValueError("reference tokens must be non-empty")
    return _multiset_f1(generated, reference)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu(generated: list[str], reference: list[str], max_n: int) -> float:
    """Sentence BLEU: modified precision with add-one smoothing on zero counts,
    geometric mean over orders 1..max_n, standard brevity penalty."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not generated:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        gen_counts = _ngrams(generated, n)
        ref_counts = _ngrams(reference, n)
        total = sum(gen_counts.values())
        matched = sum(min(c, ref_counts[g]) for g, c in gen_counts.items())
        p = matched / total if matched > 0 else 1.0 / (total + 1)
        log_sum += math.log(p)
    precision = math.exp(log_sum / max_n)
    bp = 1.0 if len(generated) >= len(reference) else \
        math.exp(1.0 - len(reference) / len(generated))
    return bp * precision


def distinct(corpus: list[list[str]], n: int) -> float:
    """Unique n-grams across the corpus divided by total n-gram count."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    seen: set[tuple[str, ...]] = set()
    total = 0
    for tokens in corpus:
        for i in range(len(tokens) - n + 1):
            seen.add(tuple(tokens[i: i + n]))
            total += 1
    return len(seen) / total if total else 0.0


def grounded_entries(knowledge: list[tuple[str, str, str]], reference: list[str],
                     stopwords: frozenset[str] = DEFAULT_STOPWORDS,
                     ) -> list[tuple[str, str, str]]:
    """Knowledge entries whose object content tokens all occur in the reference."""
    ref_set = set(reference)
    grounded = []
    for triple in knowledge:
        obj_tokens = [t for t in tokenize(triple[2]) if _content(t, stopwords)]
        if obj_tokens and all(t in ref_set for t in obj_tokens):
            grounded.append(triple)
    return grounded


def _content(token: str, stopwords: frozenset[str]) -> bool:
    return token not in stopwords and any(ch.isalnum() for ch in token)


def knowledge_f1(generated: list[str], knowledge: list[tuple[str, str, str]],
                 reference: list[str],
                 stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> float:
    """Token-overlap F1 against the turn's reference-grounded knowledge entries.

    The gold side is the multiset of object content tokens of the grounded
    entries, so an utterance quoting an entry's object verbatim recalls that
    entry fully.
    """
    if not knowledge:
        raise ValueError("knowledge must be non-empty")
    gold_tokens: list[str] = []
    for _, _, obj in grounded_entries(knowledge, reference, stopwords):
        gold_tokens.extend(t for t in tokenize(obj) if _content(t, stopwords))
    gen_tokens = [t for t in generated if _content(t, stopwords)]
    return _multiset_f1(gen_tokens, gold_tokens)


def _normalize(text: str) -> str:
    return " ".join(text.casefold().split())


def failure_rate(dialogues: list[tuple[str, str]]) -> float:
    """Fraction of (final system utterance, target topic) pairs where the
    normalized utterance does not contain the normalized topic."""
    if not dialogues:
        raise ValueError("failure_rate needs at least one dialogue")
    misses = sum(1 for utterance, topic in dialogues
                 if _normalize(topic) not in _normalize(utterance))
    return misses / len(dialogues)


@dataclass
class EvalReport:
    split: str
    n_samples: int
    ppl: float
    word_f1: float
    bleu1: float
    bleu2: float
    dist1: float
    dist2: float
    knowledge_f1: float
    failure: float
    n_dialogues: int
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.ppl < 1.0 - 1e-9:
            raise ValueError(f"perplexity below 1: {self.ppl}")
        for name in ("word_f1", "bleu1", "bleu2", "dist1", "dist2",
                     "knowledge_f1", "failure"):
            v = getattr(self, name)
            if not -1e-9 <= v <= 1.0 + 1e-9:
                raise ValueError(f"{name} out of [0, 1]: {v}")

    def to_json(self) -> dict:
        return {
            "split": self.split, "n_samples": self.n_samples,
            "n_dialogues": self.n_dialogues, "ppl": self.ppl,
            "word_f1": self.word_f1, "bleu1": self.bleu1, "bleu2": self.bleu2,
            "dist1": self.dist1, "dist2": self.dist2,
            "knowledge_f1": self.knowledge_f1, "failure": self.failure,
            "options": self.options,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    def format_table(self) -> str:
        header = (f"{'Split':<10} {'PPL':>8} {'W. F1':>7} {'BLEU-1/2':>13} "
                  f"{'DIST-1/2':>13} {'K. F1':>7} {'Fail.':>7}")
        row = (f"{self.split:<10} {self.ppl:>8.2f} {100 * self.word_f1:>7.2f} "
               f"{self.bleu1:>6.3f}/{self.bleu2:<6.3f} "
               f"{self.dist1:>6.3f}/{self.dist2:<6.3f} "
               f"{100 * self.knowledge_f1:>7.2f} {100 * self.failure:>7.2f}")
        return header + "\n" + row


def evaluate_split(samples: list[DialogueSample], model: DialogueModel,
                   vocab: Vocabulary, split: DatasetSplit | None,
                   options: RunOptions, split_name: str = "eval") -> EvalReport:
    """Generate and score every sample, then aggregate all six metrics."""
    if not samples:
        raise ValueError("cannot evaluate an empty sample list")
    inventory = split.inventory if split is not None else None
    if inventory is None:
        raise ValueError("evaluate_split needs the dataset split for its inventory")
    model.eval()

    nlls: list[list[float]] = []
    wf1s: list[float] = []
    bleu1s: list[float] = []
    bleu2s: list[float] = []
    kf1s: list[float] = []
    gen_corpus: list[list[str]] = []
    finals: list[tuple[str, str]] = []
    for idx, sample in enumerate(samples):
        try:
            ex = encode_sample(sample, vocab, inventory, m=options.m,
                               max_src_len=model.config.max_src_len,
                               max_tgt_len=model.config.max_tgt_len)
            ctx = build_context(model, ex, vocab, options)
            result = generate(ctx, model)
            nlls.append(score_reference(ctx, list(ex.reference_ids), model))
        except Exception as exc:
            raise RuntimeError(f"{split_name}[{idx}]: {exc}") from exc
        gen_tokens = vocab.decode(result.token_ids)
        ref_tokens = tokenize(sample.reference)
        gen_corpus.append(gen_tokens)
        wf1s.append(word_f1(gen_tokens, ref_tokens))
        bleu1s.append(bleu(gen_tokens, ref_tokens, max_n=1))
        bleu2s.append(bleu(gen_tokens, ref_tokens, max_n=2))
        kf1s.append(knowledge_f1(gen_tokens, list(sample.knowledge), ref_tokens))
        if sample.is_final_turn:
            finals.append((result.text, sample.target.topic))

    n = len(samples)
    return EvalReport(
        split=split_name,
        n_samples=n,
        ppl=perplexity(nlls),
        word_f1=sum(wf1s) / n,
        bleu1=sum(bleu1s) / n,
        bleu2=sum(bleu2s) / n,
        dist1=distinct(gen_corpus, 1),
        dist2=distinct(gen_corpus, 2),
        knowledge_f1=sum(kf1s) / n,
        failure=failure_rate(finals) if finals else 0.0,
        n_dialogues=len(finals),
        options={
            "mode": options.mode, "m": options.m, "delta": options.delta,
            "bias_scale": options.bias_scale, "use_csm": options.use_csm,
            "use_ikb": options.use_ikb, "drop_k": options.drop_k,
            "drop_u": options.drop_u,
        },
    )
