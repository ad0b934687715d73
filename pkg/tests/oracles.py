"""Brute-force reference implementations for every evaluation metric.

Deliberately naive: explicit loops, no shared code with the package. These are
the independent side of the metric dual-route checks.
"""

from __future__ import annotations

import math


def ppl_oracle(nlls: list[list[float]]) -> float:
    total = 0.0
    count = 0
    for seq in nlls:
        for x in seq:
            total += x
            count += 1
    return math.exp(total / count)


def word_f1_oracle(gen: list[str], ref: list[str]) -> float:
    if not gen or not ref:
        return 0.0
    overlap = 0
    ref_left = list(ref)
    for tok in gen:
        if tok in ref_left:
            ref_left.remove(tok)
            overlap += 1
    if overlap == 0:
        return 0.0
    p = overlap / len(gen)
    r = overlap / len(ref)
    return 2 * p * r / (p + r)


def _grams(tokens: list[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1)]


def bleu_oracle(gen: list[str], ref: list[str], max_n: int) -> float:
    if not gen:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        gen_grams = _grams(gen, n)
        ref_grams = _grams(ref, n)
        matched = 0
        pool = list(ref_grams)
        for g in gen_grams:
            if g in pool:
                pool.remove(g)
                matched += 1
        total = len(gen_grams)
        if matched > 0:
            p = matched / total
        else:
            p = 1.0 / (total + 1)
        log_p += math.log(p)
    score = math.exp(log_p / max_n)
    if len(gen) < len(ref):
        score *= math.exp(1.0 - len(ref) / len(gen))
    return score


def distinct_oracle(corpus: list[list[str]], n: int) -> float:
    unique = set()
    total = 0
    for tokens in corpus:
        for g in _grams(tokens, n):
            unique.add(g)
            total += 1
    if total == 0:
        return 0.0
    return len(unique) / total


def _simple_tokens(text: str) -> list[str]:
    out = []
    word = ""
    for ch in text.lower():
        if ch.isalnum() or ch == "_":
            word += ch
        else:
            if word:
                out.append(word)
                word = ""
            if not ch.isspace():
                out.append(ch)
    if word:
        out.append(word)
    return out


def knowledge_f1_oracle(gen: list[str], knowledge: list[tuple[str, str, str]],
                        ref: list[str], stopwords) -> float:
    def content(tokens):
        return [t for t in tokens
                if t not in stopwords and any(c.isalnum() for c in t)]

    gold = []
    ref_set = set(ref)
    for _, _, obj in knowledge:
        obj_tokens = content(_simple_tokens(obj))
        if obj_tokens and all(t in ref_set for t in obj_tokens):
            gold.extend(obj_tokens)
    return word_f1_oracle(content(gen), gold)


def failure_oracle(dialogues: list[tuple[str, str]]) -> float:
    misses = 0
    for utterance, topic in dialogues:
        u = " ".join(utterance.casefold().split())
        t = " ".join(topic.casefold().split())
        if t not in u:
            misses += 1
    return misses / len(dialogues)
