"""Data model and ingestion for target-guided dialogue corpora.

A dataset directory holds four JSONL files (train / dev / test_id / test_ood),
one sample per line. Each sample is a single system turn to be generated: the
dialogue history up to it, the dialogue target, the conversational scenario
(user profile + domain knowledge triples), the gold future-keyword bridge
sequence, and the reference utterance.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLIT_FILES = {
    "train": "train.jsonl",
    "dev": "dev.jsonl",
    "test_id": "test_id.jsonl",
    "test_ood": "test_ood.jsonl",
}

PAD, BOS, EOS, UNK, SEP = "<pad>", "<bos>", "<eos>", "<unk>", "<sep>"
RESERVED_TOKENS = (PAD, BOS, EOS, UNK, SEP)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_WS_RE = re.compile(r"\s+")


class CorpusError(ValueError):
    """Base for corpus-level failures."""


class ParseError(CorpusError):
    """Malformed JSONL line; message carries file and line number."""


class SchemaError(CorpusError):
    """Structurally valid JSON that violates the sample schema."""


class EncodingError(CorpusError):
    """Sample cannot be fitted into the configured length caps."""


def normalize_text(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class IntentKeyword:
    """A (keyword-type, keyword-topic) pair naming expected system behavior."""

    type: str
    topic: str

    @staticmethod
    def from_json(obj: object, where: str) -> "IntentKeyword":
        if not isinstance(obj, dict) or set(obj) != {"type", "topic"}:
            raise SchemaError(f"{where}: keyword must be {{type, topic}}, got {obj!r}")
        return IntentKeyword(type=str(obj["type"]), topic=str(obj["topic"]))

    def to_json(self) -> dict[str, str]:
        return {"type": self.type, "topic": self.topic}


@dataclass(frozen=True)
class Turn:
    speaker: str  # "user" | "system"
    text: str
    intent_keyword: IntentKeyword | None = None

    def __post_init__(self) -> None:
        if self.speaker not in ("user", "system"):
            raise SchemaError(f"speaker must be user|system, got {self.speaker!r}")
        if not normalize_text(self.text):
            raise SchemaError("turn text empty after whitespace normalization")


@dataclass(frozen=True)
class KeywordInventory:
    """Stable-indexed keyword-type set A and keyword-topic set T."""

    types: tuple[str, ...]
    topics: tuple[str, ...]
    _type_ids: dict[str, int] = field(repr=False, compare=False, default_factory=dict)
    _topic_ids: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.types)) != len(self.types):
            raise SchemaError("duplicate keyword-type strings")
        if len(set(self.topics)) != len(self.topics):
            raise SchemaError("duplicate keyword-topic strings")
        object.__setattr__(self, "_type_ids", {s: i for i, s in enumerate(self.types)})
        object.__setattr__(self, "_topic_ids", {s: i for i, s in enumerate(self.topics)})

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def n_topics(self) -> int:
        return len(self.topics)

    def type_id(self, name: str) -> int:
        try:
            return self._type_ids[name]
        except KeyError:
            raise SchemaError(f"unknown keyword-type {name!r}") from None

    def topic_id(self, name: str) -> int:
        try:
            return self._topic_ids[name]
        except KeyError:
            raise SchemaError(f"unknown keyword-topic {name!r}") from None

    def has(self, kw: IntentKeyword) -> bool:
        return kw.type in self._type_ids and kw.topic in self._topic_ids

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"types": list(self.types), "topics": list(self.topics)}, indent=2)
        )

    @staticmethod
    def load(path: str | Path) -> "KeywordInventory":
        obj = json.loads(Path(path).read_text())
        return KeywordInventory(types=tuple(obj["types"]), topics=tuple(obj["topics"]))


@dataclass(frozen=True)
class DialogueSample:
    history: tuple[Turn, ...]
    target: IntentKeyword
    profile: tuple[tuple[str, str], ...]  # ordered key -> value pairs
    knowledge: tuple[tuple[str, str, str], ...]  # (subject, relation, object)
    bridge: tuple[IntentKeyword, ...]  # gold keywords, current turn onward
    reference: str

    def __post_init__(self) -> None:
        if not self.bridge:
            raise SchemaError("bridge sequence must be non-empty")
        if not self.knowledge:
            raise SchemaError("knowledge list must be non-empty")
        if not normalize_text(self.reference):
            raise SchemaError("reference empty after whitespace normalization")

    @property
    def is_final_turn(self) -> bool:
        """True when this sample generates the dialogue's last system turn."""
        return len(self.bridge) == 1

    def to_json(self) -> dict:
        return {
            "history": [
                {
                    "speaker": t.speaker,
                    "text": t.text,
                    **({"keyword": t.intent_keyword.to_json()} if t.intent_keyword else {}),
                }
                for t in self.history
            ],
            "target": self.target.to_json(),
            "profile": {k: v for k, v in self.profile},
            "knowledge": [list(tr) for tr in self.knowledge],
            "bridge": [kw.to_json() for kw in self.bridge],
            "reference": self.reference,
        }


@dataclass
class DatasetSplit:
    train: list[DialogueSample]
    dev: list[DialogueSample]
    test_id: list[DialogueSample]
    test_ood: list[DialogueSample]
    inventory: KeywordInventory

    def split(self, name: str) -> list[DialogueSample]:
        if name not in SPLIT_FILES:
            raise KeyError(f"unknown split {name!r}; expected one of {sorted(SPLIT_FILES)}")
        return getattr(self, name)


def _parse_sample(obj: dict, where: str) -> DialogueSample:
    for key in ("history", "target", "profile", "knowledge", "bridge", "reference"):
        if key not in obj:
            raise SchemaError(f"{where}: missing field {key!r}")
    turns = []
    for i, t in enumerate(obj["history"]):
        if not isinstance(t, dict) or "speaker" not in t or "text" not in t:
            raise SchemaError(f"{where}: history[{i}] must have speaker and text")
        kw = None
        if t.get("keyword") is not None:
            kw = IntentKeyword.from_json(t["keyword"], f"{where}: history[{i}]")
        if t["speaker"] == "system" and kw is None:
            raise SchemaError(f"{where}: history[{i}] system turn missing keyword")
        turns.append(Turn(speaker=t["speaker"], text=t["text"], intent_keyword=kw))
    knowledge = []
    for i, tr in enumerate(obj["knowledge"]):
        if not isinstance(tr, list) or len(tr) != 3:
            raise SchemaError(f"{where}: knowledge[{i}] must be a [s, r, o] triple")
        knowledge.append((str(tr[0]), str(tr[1]), str(tr[2])))
    if not isinstance(obj["profile"], dict):
        raise SchemaError(f"{where}: profile must be a string map")
    try:
        return DialogueSample(
            history=tuple(turns),
            target=IntentKeyword.from_json(obj["target"], where),
            profile=tuple((str(k), str(v)) for k, v in obj["profile"].items()),
            knowledge=tuple(knowledge),
            bridge=tuple(
                IntentKeyword.from_json(kw, f"{where}: bridge[{i}]")
                for i, kw in enumerate(obj["bridge"])
            ),
            reference=str(obj["reference"]),
        )
    except SchemaError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def read_jsonl(path: Path) -> list[DialogueSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path.name}:{lineno}: {exc.msg}") from None
            samples.append(_parse_sample(obj, f"{path.name}:{lineno}"))
    return samples


def write_jsonl(path: Path, samples: list[DialogueSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False) + "\n")


def build_inventory(samples: list[DialogueSample]) -> KeywordInventory:
    """Collect the sorted deduplicated keyword strings seen in bridges and targets."""
    if not samples:
        raise SchemaError("cannot build an inventory from zero samples")
    types: set[str] = set()
    topics: set[str] = set()
    for s in samples:
        for kw in (*s.bridge, s.target):
            types.add(kw.type)
            topics.add(kw.topic)
        for t in s.history:
            if t.intent_keyword is not None:
                types.add(t.intent_keyword.type)
                topics.add(t.intent_keyword.topic)
    return KeywordInventory(types=tuple(sorted(types)), topics=tuple(sorted(topics)))


def _check_inventory_covers(samples: list[DialogueSample], inventory: KeywordInventory,
                            split: str) -> None:
    for i, s in enumerate(samples):
        for kw in (*s.bridge, s.target):
            if kw.type not in inventory.types:
                raise SchemaError(f"{split}[{i}]: unknown keyword-type {kw.type!r}")
            if kw.topic not in inventory.topics:
                raise SchemaError(f"{split}[{i}]: unknown keyword-topic {kw.topic!r}")


def load_dataset(path: str | Path, inventory: KeywordInventory | None = None) -> DatasetSplit:
    """Load the four split files under ``path``.

    When no inventory is given, an ``inventory.json`` in the directory is used
    if present; otherwise one is built from train+dev.
    """
    root = Path(path)
    fixed = inventory is not None
    parts = {}
    for split, fname in SPLIT_FILES.items():
        fpath = root / fname
        if not fpath.exists():
            raise CorpusError(f"missing split file: {fpath}")
        parts[split] = read_jsonl(fpath)
    if inventory is None:
        inv_path = root / "inventory.json"
        if inv_path.exists():
            inventory = KeywordInventory.load(inv_path)
            fixed = True
        else:
            inventory = build_inventory(parts["train"] + parts["dev"])
    if fixed:
        for split, samples in parts.items():
            _check_inventory_covers(samples, inventory, split)
    return DatasetSplit(inventory=inventory, **parts)


def verify_ood(split: DatasetSplit) -> tuple[bool, list[str]]:
    """Check that no test_ood target topic ever appears as a train target topic."""
    train_topics = {s.target.topic for s in split.train}
    offenders = sorted({s.target.topic for s in split.test_ood} & train_topics)
    return (not offenders, offenders)


@dataclass
class Vocabulary:
    """Token <-> id map with reserved ids: pad=0, bos, eos, unk, sep."""

    id_to_token: list[str]
    token_to_id: dict[str, int] = field(repr=False)

    pad_id = 0
    bos_id = 1
    eos_id = 2
    unk_id = 3
    sep_id = 4

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        unk = self.unk_id
        return [self.token_to_id.get(t, unk) for t in tokens]

    def encode_text(self, text: str) -> list[int]:
        return self.encode(tokenize(text))

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.id_to_token, ensure_ascii=False, indent=0))

    @staticmethod
    def load(path: str | Path) -> "Vocabulary":
        id_to_token = json.loads(Path(path).read_text())
        return Vocabulary(id_to_token=id_to_token,
                          token_to_id={t: i for i, t in enumerate(id_to_token)})


def _sample_token_stream(sample: DialogueSample) -> list[str]:
    toks: list[str] = []
    for t in sample.history:
        toks.extend(tokenize(t.text))
    toks.extend(tokenize(sample.reference))
    toks.extend(tokenize(sample.target.type))
    toks.extend(tokenize(sample.target.topic))
    for k, v in sample.profile:
        toks.extend(tokenize(k))
        toks.extend(tokenize(v))
    for s, r, o in sample.knowledge:
        toks.extend(tokenize(s))
        toks.extend(tokenize(r))
        toks.extend(tokenize(o))
    for kw in sample.bridge:
        toks.extend(tokenize(kw.type))
        toks.extend(tokenize(kw.topic))
    return toks


def build_vocabulary(samples: list[DialogueSample], min_count: int = 1) -> Vocabulary:
    """Frequency-thresholded vocabulary over the train split, reserved ids prepended."""
    counts: Counter[str] = Counter()
    for s in samples:
        counts.update(_sample_token_stream(s))
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    id_to_token = list(RESERVED_TOKENS) + kept
    return Vocabulary(id_to_token=id_to_token,
                      token_to_id={t: i for i, t in enumerate(id_to_token)})


@dataclass(frozen=True)
class TrainingExample:
    """Tensor-ready sample: token-id views plus the multi-hot keyword target."""

    knowledge_ids: tuple[int, ...]
    profile_ids: tuple[int, ...]
    context_ids: tuple[int, ...]
    reference_ids: tuple[int, ...]  # reference tokens + eos
    keyword_targets: np.ndarray  # float32, length n_types + n_topics

    def positive_type_ids(self, n_types: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.keyword_targets[:n_types])]

    def positive_topic_ids(self, n_types: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.keyword_targets[n_types:])]


def _join_with_sep(chunks: list[list[int]], sep_id: int) -> list[int]:
    out: list[int] = []
    for i, c in enumerate(chunks):
        if i:
            out.append(sep_id)
        out.extend(c)
    return out


def encode_knowledge(knowledge: tuple[tuple[str, str, str], ...] | list,
                     vocab: Vocabulary, cap: int) -> list[int]:
    return _fit_entries(
        [vocab.encode(tokenize(f"{s} {r} {o}")) for s, r, o in knowledge],
        vocab.sep_id, cap, "knowledge")


def encode_profile(profile, vocab: Vocabulary, cap: int) -> list[int]:
    if not profile:
        return []
    return _fit_entries(
        [vocab.encode(tokenize(f"{k} {v}")) for k, v in profile],
        vocab.sep_id, cap, "profile")


def encode_context(history, target: IntentKeyword, vocab: Vocabulary,
                   cap: int) -> list[int]:
    """Separator-joined history turns followed by the target rendering.

    Oldest turns are dropped first; the target tail is never truncated.
    """
    target_ids = vocab.encode(tokenize(f"{target.type} {target.topic}"))
    turn_ids = [vocab.encode_text(t.text) for t in history]
    for keep in range(len(turn_ids), -1, -1):
        cand = _join_with_sep(turn_ids[len(turn_ids) - keep:] + [target_ids],
                              vocab.sep_id)
        if len(cand) <= cap:
            return cand
    raise EncodingError(
        f"context exceeds max_src_len={cap} even with all history dropped")


def encode_sample(
    sample: DialogueSample,
    vocab: Vocabulary,
    inventory: KeywordInventory,
    m: int,
    max_src_len: int = 256,
    max_tgt_len: int = 100,
) -> TrainingExample:
    """Turn a DialogueSample into id sequences and the multi-hot bridge target.

    The multi-hot vector marks one positive per distinct keyword-type and per
    distinct keyword-topic among the first min(m, |bridge|) bridge entries;
    duplicates across the window collapse (set semantics).
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    knowledge_ids = encode_knowledge(sample.knowledge, vocab, max_src_len)
    profile_ids = encode_profile(sample.profile, vocab, max_src_len)
    ctx = encode_context(sample.history, sample.target, vocab, max_src_len)

    reference_ids = vocab.encode_text(sample.reference) + [vocab.eos_id]
    if len(reference_ids) > max_tgt_len:
        raise EncodingError(
            f"reference length {len(reference_ids)} exceeds max_tgt_len={max_tgt_len}")

    n_types, n_topics = inventory.n_types, inventory.n_topics
    targets = np.zeros(n_types + n_topics, dtype=np.float32)
    for kw in sample.bridge[: min(m, len(sample.bridge))]:
        targets[inventory.type_id(kw.type)] = 1.0
        targets[n_types + inventory.topic_id(kw.topic)] = 1.0

    return TrainingExample(
        knowledge_ids=tuple(knowledge_ids),
        profile_ids=tuple(profile_ids),
        context_ids=tuple(ctx),
        reference_ids=tuple(reference_ids),
        keyword_targets=targets,
    )


def _fit_entries(entries: list[list[int]], sep_id: int, cap: int, what: str) -> list[int]:
    """Join entries with separators, dropping whole trailing entries to fit ``cap``."""
    for n in range(len(entries), 0, -1):
        joined = _join_with_sep(entries[:n], sep_id)
        if len(joined) <= cap:
            return joined
    raise EncodingError(f"first {what} entry alone exceeds the {cap}-token cap")
