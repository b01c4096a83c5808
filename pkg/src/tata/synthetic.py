"""Bundled synthetic corpora for offline end-to-end runs.

The stance corpus has three separable classes over twelve topics, eight of
which are held out of training (zero-shot).  Pro and Against passages carry
class-specific marker verbs; Neutral passages either describe the topic
without a stance marker or talk about a different topic entirely, which is
how neutral pairs arise in the real benchmark.  The news corpus provides
multi-site documents about a wider topic pool for quadruplet building."""

from __future__ import annotations

import numpy as np

from .augment import CorpusDoc
from .data import StanceExample, StanceLabel

STANCE_TOPICS = (
    "solar farms",
    "night buses",
    "river dams",
    "city parks",
    "wind towers",
    "glass bridges",
    "metro lines",
    "corn subsidies",
    "beach resorts",
    "space probes",
    "robot taxis",
    "paper ballots",
)
SEEN_TOPICS = STANCE_TOPICS[:4]
HELD_OUT_TOPICS = STANCE_TOPICS[4:]

EXTRA_NEWS_TOPICS = (
    "tram fares",
    "school gyms",
    "harbor cranes",
    "grain silos",
    "quiet zones",
    "bike racks",
    "market stalls",
    "radio masts",
)

PRO_MARKERS = ("support", "praise", "favor", "applaud", "endorse", "welcome")
AGAINST_MARKERS = ("oppose", "reject", "condemn", "denounce", "resist", "deplore")
NEUTRAL_VERBS = ("describe", "mention", "review", "discuss", "recall", "summarize")

SUBJECTS = (
    "many locals",
    "the council",
    "several residents",
    "most voters",
    "the board",
    "union members",
    "campus groups",
    "farm owners",
)
TAILS = (
    "after the long debate",
    "in the latest survey",
    "during the town hall",
    "without much fanfare",
    "despite earlier doubts",
    "ahead of the vote",
    "for a second year",
    "as costs keep shifting",
)

SITES = tuple(f"site{ch}.example" for ch in "abcdefgh")

_NEWS_OPENERS = (
    "fresh notes on",
    "a short report on",
    "new chatter about",
    "quiet talk around",
    "another update on",
    "a field memo about",
)
_NEWS_MIDDLES = (
    "drew steady attention this week",
    "kept readers busy for days",
    "made small waves among editors",
    "filled the morning wires again",
    "passed without much drama",
    "set the letters page alight",
)
_NEWS_CLOSERS = (
    "watchers of {topic} want more details",
    "crews covering {topic} filed twice",
    "desks tracking {topic} stayed late",
    "editors following {topic} asked around",
    "readers mailing about {topic} got replies",
    "stringers chasing {topic} kept notes",
)


def _pick(rng: np.random.Generator, pool):
    return pool[int(rng.integers(len(pool)))]


_NEUTRAL_FRAGMENTS = (
    "minutes from tuesday went out",
    "a brief note reached the desk",
    "weather stayed mild all week",
    "the agenda ran long again",
    "coffee arrived before the talk",
    "attendance held steady overall",
    "noted",
    "pending",
    "item deferred",
    "no remarks filed",
    "minutes went out",
    "nothing new",
)


def _stance_passage(topic: str, stance: StanceLabel, rng: np.random.Generator) -> str:
    markers = PRO_MARKERS if stance == StanceLabel.PRO else AGAINST_MARKERS
    return f"{_pick(rng, SUBJECTS)} {_pick(rng, markers)} the {topic} {_pick(rng, TAILS)}"


def _phenomena(rng: np.random.Generator, implicit: bool) -> frozenset:
    flags = set()
    if implicit:
        flags.add("Imp")
    if rng.random() < 0.20:
        flags.add("Qte")
    if rng.random() < 0.10:
        flags.add("Sarc")
    if rng.random() < 0.10:
        flags.add("mlS")
    if rng.random() < 0.15:
        flags.add("mlT")
    return frozenset(flags)


def make_stance_corpus(seed: int = 0) -> dict:
    """300 examples: 144 train + 36 val over the four seen topics, and a
    120-example test split (48 few-shot over seen topics, 72 zero-shot
    over the eight held-out topics).

    The classes are separable by their marker verbs; half the Neutral
    examples are stance-free fragments that never mention the topic, so an
    empty passage sits squarely in Neutral territory."""
    rng = np.random.default_rng([seed, 11])
    splits: dict[str, list[StanceExample]] = {"train": [], "val": [], "test": []}
    counter = 0

    def emit(split, topic, stance, seen, with_flags, passage, implicit=False):
        nonlocal counter
        flags = _phenomena(rng, implicit) if with_flags else frozenset()
        counter += 1
        splits[split].append(
            StanceExample(
                id=f"toy-{split}-{counter:04d}",
                passage=passage,
                topic=topic,
                stance=stance,
                seen=seen,
                phenomena=flags,
            )
        )

    plan = [
        ("train", SEEN_TOPICS, 12, True, False),
        ("val", SEEN_TOPICS, 3, True, False),
        ("test", SEEN_TOPICS, 4, True, True),
        ("test", HELD_OUT_TOPICS, 3, False, True),
    ]
    for split, topics, per_cell, seen, with_flags in plan:
        for topic in topics:
            for stance in (StanceLabel.PRO, StanceLabel.AGAINST):
                for _ in range(per_cell):
                    emit(split, topic, stance, seen, with_flags, _stance_passage(topic, stance, rng))
            for i in range(per_cell):
                if i % 2 == 0:
                    emit(split, topic, StanceLabel.NEUTRAL, seen, with_flags,
                         _pick(rng, _NEUTRAL_FRAGMENTS), implicit=True)
                else:
                    passage = (
                        f"{_pick(rng, SUBJECTS)} {_pick(rng, NEUTRAL_VERBS)} "
                        f"the {topic} {_pick(rng, TAILS)}"
                    )
                    emit(split, topic, StanceLabel.NEUTRAL, seen, with_flags, passage)
    return splits


def make_news_corpus(seed: int = 0, docs_per_topic: int = 6) -> list[CorpusDoc]:
    """Multi-site documents over the stance topics plus extras; each text
    mentions its topic three times so bag-of-words pairing is sharp."""
    rng = np.random.default_rng([seed, 23])
    docs = []
    topics = STANCE_TOPICS + EXTRA_NEWS_TOPICS
    for t_idx, topic in enumerate(topics):
        for d in range(docs_per_topic):
            site = SITES[(t_idx + d) % len(SITES)]
            opener = _pick(rng, _NEWS_OPENERS)
            middle = _pick(rng, _NEWS_MIDDLES)
            closer = _pick(rng, _NEWS_CLOSERS).format(topic=topic)
            text = f"{opener} the {topic} {middle}. {topic} {closer}."
            docs.append(CorpusDoc(site=site, text=text))
    return docs


def vocabulary_texts(stance_splits: dict, corpus: list[CorpusDoc]) -> list[str]:
    """Everything the tokenizer should know about, in deterministic order."""
    texts = []
    for split in ("train", "val", "test"):
        for ex in stance_splits[split]:
            texts.append(ex.passage)
            texts.append(ex.topic)
    for doc in corpus:
        texts.append(doc.text)
    return texts
