"""Synthetic format-compatible corpus generator.

Builds a small closed world of media topics, each with its own signature
vocabulary, and unrolls template dialogues over it. Every generated dialogue
ends with a delivery turn that mentions the target topic verbatim, so gold
references always achieve their target. OOD test dialogues draw their targets
from a topic pool that never serves as a training target.

The planted correlations (topic -> signature words -> delivery phrasing) are
what the keyword-bridging trend check trains against: the final phrasing is
predictable from the keyword identity, while the surrounding history carries
distractor topic mentions.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .corpus import DialogueSample, IntentKeyword, KeywordInventory, Turn, write_jsonl

DOMAINS = ("music", "movie", "book")
DELIVERY_TYPE = {"music": "play music", "movie": "start movie", "book": "open book"}
RECOMMEND_TYPE = {d: f"{d} recommendation" for d in DOMAINS}
CHAT_TYPE = "mood chat"
GREET_TYPE = "greeting"
NONE_TOPIC = "none"

_CONSONANTS = "bdfglmnprstvz"
_VOWELS = "aeiou"

# Every English word the turn/profile templates emit; pseudo-words must not
# collide with these or a topic name could leak into unrelated utterances.
_TEMPLATE_WORDS = frozenset(
    """hello nice to see you again i remember enjoy that style suits have heard
    of it is a full and let me for now the hi am in mood some today keep hearing
    about but nothing grabs oh tell more sounds great go ahead like my kind
    thing name accepted rejected genre highlight play music start movie open
    book recommendation greeting chat none there called all how about known
    alright will right away waiting here we brace forget hmm not my what
    else""".split()
)


def _word_factory(rng: random.Random):
    seen: set[str] = set(_TEMPLATE_WORDS)

    def fresh(syllables: int = 2) -> str:
        while True:
            w = "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(syllables))
            if w not in seen:
                seen.add(w)
                return w

    return fresh


@dataclass(frozen=True)
class TopicCard:
    name: str
    domain: str
    genre: str
    sig1: str  # signature words: unique to this topic
    sig2: str

    def triples(self) -> list[tuple[str, str, str]]:
        return [
            (self.name, "genre", self.genre),
            (self.name, "highlight", self.sig1),
            (self.name, "style", self.sig2),
        ]


@dataclass
class World:
    topics: list[TopicCard]
    genres: list[str]
    user_names: list[str]
    inventory: KeywordInventory


def _topic_names(n_topics: int, topic_words: int, rng: random.Random, fresh) -> list[str]:
    if topic_words == 1:
        return [fresh(3) for _ in range(n_topics)]
    # Multi-word names drawn from a small shared pool: distinct as word sets,
    # heavily overlapping as words, so naming one requires the exact sequence.
    pool_size = 4
    while pool_size * (pool_size - 1) // 2 < 2 * n_topics:
        pool_size += 1
    pool = [fresh() for _ in range(pool_size)]
    names: list[str] = []
    used: set[frozenset[str]] = set()
    while len(names) < n_topics:
        words = rng.sample(pool, topic_words)
        key = frozenset(words)
        if len(key) == topic_words and key not in used:
            used.add(key)
            names.append(" ".join(words))
    return names


def build_world(n_topics: int, seed: int, topic_words: int = 1) -> World:
    rng = random.Random(seed)
    fresh = _word_factory(rng)
    genres = [fresh() for _ in range(6)]
    user_names = [fresh() for _ in range(8)]
    names = _topic_names(n_topics, topic_words, rng, fresh)
    topics = [
        TopicCard(
            name=names[i],
            domain=DOMAINS[i % len(DOMAINS)],
            genre=rng.choice(genres),
            sig1=fresh(),
            sig2=fresh(),
        )
        for i in range(n_topics)
    ]
    types = sorted({GREET_TYPE, CHAT_TYPE, *RECOMMEND_TYPE.values(), *DELIVERY_TYPE.values()})
    topic_names = sorted({NONE_TOPIC, *(t.name for t in topics)})
    inventory = KeywordInventory(types=tuple(types), topics=tuple(topic_names))
    return World(topics=topics, genres=genres, user_names=user_names, inventory=inventory)


def _dialogue(world: World, target: TopicCard, rng: random.Random,
              n_distractors: int, pool: list[TopicCard] | None = None,
              ) -> tuple[list[Turn], IntentKeyword, list[tuple[str, str]],
                         list[tuple[str, str, str]]]:
    """One full dialogue: alternating turns, system turns keyword-annotated."""
    user = rng.choice(world.user_names)
    others = [t for t in (pool or world.topics) if t.name != target.name]
    fav = rng.choice(others)
    distractors = rng.sample(others, k=min(n_distractors, len(others)))

    goal = IntentKeyword(type=DELIVERY_TYPE[target.domain], topic=target.name)
    profile = [
        ("name", user),
        (f"accepted {target.domain}", f"{fav.name} {target.name}"),
        (f"rejected {fav.domain}", rng.choice(others).name),
    ]
    knowledge = target.triples() + fav.triples()
    for d in distractors:
        knowledge.extend(d.triples())

    def recommend_line(card: TopicCard) -> str:
        return rng.choice([
            f"have you heard of {card.name} ? it is a {card.genre} {card.domain} "
            f"full of {card.sig1} and {card.sig2} .",
            f"there is a {card.genre} {card.domain} called {card.name} , "
            f"all about {card.sig1} and {card.sig2} .",
            f"how about {card.name} ? a {card.genre} {card.domain} "
            f"known for {card.sig1} .",
        ])

    verb = goal.type.split()[0]
    delivery_line = rng.choice([
        f"let me {verb} {target.name} for you now , enjoy the {target.sig1} .",
        f"alright , i will {verb} {target.name} right away , the {target.sig1} "
        f"is waiting .",
        f"here we go , {verb} {target.name} it is , brace for {target.sig1} .",
    ])

    # plan: (keyword, system text, user line preceding it)
    plan: list[tuple[IntentKeyword, str, str]] = []
    n_sys = rng.randint(3, 6)
    plan.append((IntentKeyword(GREET_TYPE, NONE_TOPIC),
                 f"hello {user} , nice to see you again .",
                 f"hi , i am in the mood for some {target.domain} today ."))
    if n_sys >= 4:
        plan.append((IntentKeyword(CHAT_TYPE, fav.name),
                     f"i remember you enjoy {fav.name} , that {fav.sig1} style "
                     f"suits you .",
                     f"i keep hearing about "
                     f"{rng.choice(distractors).name if distractors else fav.name} "
                     f"but nothing grabs me ."))
    # rejected recommendations: same template, wrong topic
    n_decoys = min(max(0, n_sys - 4), len(distractors))
    ask_line = "oh ? tell me more about it ."
    reject_line = "hmm , not my thing , what else is there ?"
    for i, decoy in enumerate(rng.sample(distractors, n_decoys) if n_decoys else []):
        plan.append((IntentKeyword(RECOMMEND_TYPE[decoy.domain], decoy.name),
                     recommend_line(decoy),
                     ask_line if i == 0 else reject_line))
    plan.append((IntentKeyword(RECOMMEND_TYPE[target.domain], target.name),
                 recommend_line(target),
                 ask_line if n_decoys == 0 else reject_line))
    near_miss = rng.choice(distractors).name if distractors else fav.name
    plan.append((goal, delivery_line,
                 f"sounds great , forget {near_miss} , go ahead !"))

    turns: list[Turn] = []
    for kw, text, user_line in plan:
        turns.append(Turn(speaker="user", text=user_line))
        turns.append(Turn(speaker="system", text=text, intent_keyword=kw))
    return turns, goal, profile, knowledge


def unroll(turns: list[Turn], goal: IntentKeyword, profile: list[tuple[str, str]],
           knowledge: list[tuple[str, str, str]]) -> list[DialogueSample]:
    """One DialogueSample per system turn, bridge running to dialogue end."""
    sys_idx = [i for i, t in enumerate(turns) if t.speaker == "system"]
    keywords = [turns[i].intent_keyword for i in sys_idx]
    samples = []
    for pos, i in enumerate(sys_idx):
        samples.append(DialogueSample(
            history=tuple(turns[:i]),
            target=goal,
            profile=tuple(profile),
            knowledge=tuple(knowledge),
            bridge=tuple(keywords[pos:]),
            reference=turns[i].text,
        ))
    return samples


@dataclass
class CorpusSpec:
    n_topics: int = 12
    n_ood_topics: int = 3
    n_train: int = 8  # dialogues per split
    n_dev: int = 2
    n_test_id: int = 2
    n_test_ood: int = 2
    n_distractors: int = 1
    topic_words: int = 1
    seed: int = 0


def generate_corpus(spec: CorpusSpec, out_dir: str | Path) -> KeywordInventory:
    """Write train/dev/test_id/test_ood JSONL files plus inventory.json."""
    if spec.n_ood_topics >= spec.n_topics:
        raise ValueError("need at least one in-domain topic")
    world = build_world(spec.n_topics, spec.seed, topic_words=spec.topic_words)
    rng = random.Random(spec.seed + 1)
    id_topics = world.topics[: spec.n_topics - spec.n_ood_topics]
    ood_topics = world.topics[spec.n_topics - spec.n_ood_topics:]

    def make(n: int, targets: list[TopicCard]) -> list[DialogueSample]:
        # Non-target mentions always come from the in-domain pool, so OOD
        # topics never occur anywhere in train (strictly stronger than the
        # target-disjointness the OOD check demands).
        samples: list[DialogueSample] = []
        for i in range(n):
            target = targets[i % len(targets)]
            samples.extend(unroll(*_dialogue(world, target, rng, spec.n_distractors,
                                             pool=id_topics)))
        return samples

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "train.jsonl", make(spec.n_train, id_topics))
    write_jsonl(out / "dev.jsonl", make(spec.n_dev, id_topics))
    write_jsonl(out / "test_id.jsonl", make(spec.n_test_id, id_topics))
    write_jsonl(out / "test_ood.jsonl", make(spec.n_test_ood, ood_topics))
    world.inventory.save(out / "inventory.json")
    return world.inventory
