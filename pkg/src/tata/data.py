"""Record types and JSONL loading for the three dataset families:
stance-labeled passage/topic pairs, topic-paired pre-training
quadruplets, and fixed-target records scored leave-one-target-out."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

# Five annotation flags carried by test examples: quotation, sarcasm,
# implicit topic, multi-stance passage, multi-topic passage.
PHENOMENA = ("Qte", "Sarc", "Imp", "mlS", "mlT")

SEM16_TARGETS = ("DT", "HC", "FM", "LA", "A", "CC")


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


class StanceLabel(IntEnum):
    """Three-way stance; internal index order fixes argmax tie-breaking."""

    PRO = 0
    AGAINST = 1
    NEUTRAL = 2

    @classmethod
    def from_wire(cls, value) -> "StanceLabel":
        """Accept the public numeric encoding (0=Against, 1=Neutral, 2=Pro)
        or canonical names, case-insensitive."""
        if isinstance(value, str):
            name = value.strip().lower()
            by_name = {"pro": cls.PRO, "against": cls.AGAINST, "neutral": cls.NEUTRAL}
            if name in by_name:
                return by_name[name]
            if name in {"0", "1", "2"}:
                value = int(name)
            else:
                raise DataError(f"unrecognized stance value {value!r}")
        if isinstance(value, bool) or not isinstance(value, int):
            raise DataError(f"unrecognized stance value {value!r}")
        by_wire = {0: cls.AGAINST, 1: cls.NEUTRAL, 2: cls.PRO}
        if value not in by_wire:
            raise DataError(f"stance wire value must be 0, 1, or 2, got {value}")
        return by_wire[value]

    def canonical(self) -> str:
        return {StanceLabel.PRO: "Pro", StanceLabel.AGAINST: "Against", StanceLabel.NEUTRAL: "Neutral"}[self]


@dataclass
class StanceExample:
    """One stance-detection record: a passage, the topic it is judged
    against, and the gold label, plus split/phenomena metadata."""

    id: str
    passage: str
    topic: str
    stance: StanceLabel
    seen: bool = False
    phenomena: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.topic:
            raise DataError(f"example {self.id!r}: topic must be nonempty")
        self.phenomena = frozenset(self.phenomena)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "passage": self.passage,
            "topic": self.topic,
            "stance": self.stance.canonical(),
            "seen": self.seen,
            "phenomena": sorted(self.phenomena),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StanceExample":
        missing = [k for k in ("id", "passage", "topic", "stance", "seen") if k not in obj]
        if missing:
            raise DataError(f"missing fields {missing}")
        return cls(
            id=str(obj["id"]),
            passage=str(obj["passage"]),
            topic=str(obj["topic"]),
            stance=StanceLabel.from_wire(obj["stance"]),
            seen=bool(obj["seen"]),
            phenomena=frozenset(obj.get("phenomena", ())),
        )


@dataclass
class TawQuadruplet:
    """A passage, its topic, a paraphrase of that topic, and a topically
    similar passage from a different source site."""

    passage: str
    topic: str
    topic_paraphrase: str
    similar_passage: str
    site_p: str
    site_q: str
    similarity: float

    def __post_init__(self):
        if self.site_p == self.site_q:
            raise DataError(f"quadruplet sites must differ, both are {self.site_p!r}")
        if not self.topic_paraphrase:
            raise DataError("topic_paraphrase must be nonempty (equal to topic when paraphrase skipped)")
        if not -1.0 <= self.similarity <= 1.0:
            raise DataError(f"similarity must be a cosine in [-1, 1], got {self.similarity}")

    def to_json(self) -> dict:
        return {
            "passage": self.passage,
            "topic": self.topic,
            "topic_paraphrase": self.topic_paraphrase,
            "similar_passage": self.similar_passage,
            "site_p": self.site_p,
            "site_q": self.site_q,
            "similarity": self.similarity,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TawQuadruplet":
        keys = ("passage", "topic", "topic_paraphrase", "similar_passage", "site_p", "site_q", "similarity")
        missing = [k for k in keys if k not in obj]
        if missing:
            raise DataError(f"missing fields {missing}")
        return cls(**{k: obj[k] for k in keys})


@dataclass
class Sem16Record:
    """Fixed-target stance record; targets come from the standard six."""

    passage: str
    target: str
    stance: StanceLabel

    def __post_init__(self):
        if self.target not in SEM16_TARGETS:
            raise DataError(f"target must be one of {SEM16_TARGETS}, got {self.target!r}")

    def to_json(self) -> dict:
        return {"passage": self.passage, "target": self.target, "stance": self.stance.canonical()}

    @classmethod
    def from_json(cls, obj: dict) -> "Sem16Record":
        missing = [k for k in ("passage", "target", "stance") if k not in obj]
        if missing:
            raise DataError(f"missing fields {missing}")
        return cls(
            passage=str(obj["passage"]),
            target=str(obj["target"]),
            stance=StanceLabel.from_wire(obj["stance"]),
        )


def _load_jsonl(path, parse, strict: bool):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    records = []
    problems = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(parse(json.loads(line)))
            except (json.JSONDecodeError, DataError, TypeError) as exc:
                message = f"{path.name} line {lineno}: {exc}"
                if strict:
                    raise DataError(message) from exc
                problems.append(message)
    for message in problems:
        warnings.warn(f"skipped malformed record: {message}")
    return records


def _save_jsonl(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def load_stance_jsonl(path, strict: bool = True) -> list[StanceExample]:
    return _load_jsonl(path, StanceExample.from_json, strict)


def save_stance_jsonl(records, path) -> None:
    _save_jsonl(records, path)


def load_taw_jsonl(path, strict: bool = True) -> list[TawQuadruplet]:
    return _load_jsonl(path, TawQuadruplet.from_json, strict)


def save_taw_jsonl(records, path) -> None:
    _save_jsonl(records, path)


def load_sem16_jsonl(path, strict: bool = True) -> list[Sem16Record]:
    return _load_jsonl(path, Sem16Record.from_json, strict)


def save_sem16_jsonl(records, path) -> None:
    _save_jsonl(records, path)


def split_zero_few(test: list[StanceExample]) -> tuple[list[StanceExample], list[StanceExample]]:
    """Partition by the stored seen flag: zero-shot (unseen topics) first."""
    zero = [ex for ex in test if not ex.seen]
    few = [ex for ex in test if ex.seen]
    return zero, few


def split_counts(examples: list[StanceExample]) -> dict:
    """Example-level and topic-level counts for a split."""
    return {"examples": len(examples), "topics": len({ex.topic for ex in examples})}


def leave_one_target_out(records: list[Sem16Record], held_out: str) -> tuple[list[Sem16Record], list[Sem16Record]]:
    if held_out not in SEM16_TARGETS:
        raise DataError(f"held-out target must be one of {SEM16_TARGETS}, got {held_out!r}")
    test = [r for r in records if r.target == held_out]
    train = [r for r in records if r.target != held_out]
    if not test:
        warnings.warn(f"held-out target {held_out} absent from data; test split is empty")
    return train, test
