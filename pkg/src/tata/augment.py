"""Dataset construction: the topic-paired quadruplet builder over a news
corpus, and the paraphrase fan-out that augments a stance training set.

Both run against the provider boundary, so the bundled mocks make them
fully offline and deterministic; with file-backed providers a record whose
responses are not on file yet is deferred, the requests are written for
the worker, and a rerun completes the build."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DataError, StanceExample, TawQuadruplet, _load_jsonl, _save_jsonl
from .providers import MissingProviderResponse, ProviderJobError

log = logging.getLogger(__name__)

# Topics tagged with any of these entity classes are named entities that
# cannot be meaningfully paraphrased; their paraphrase slot keeps the
# original topic.
SKIP_ENTITY_CLASSES = frozenset(
    {"PERSON", "GPE", "LOC", "TIME", "PERCENT", "QUANTITY", "ORDINAL", "MONEY", "DATE"}
)


@dataclass
class CorpusDoc:
    site: str
    text: str

    def __post_init__(self):
        if not self.site:
            raise DataError("corpus document needs a nonempty site")

    def to_json(self) -> dict:
        return {"site": self.site, "text": self.text}

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusDoc":
        missing = [k for k in ("site", "text") if k not in obj]
        if missing:
            raise DataError(f"missing fields {missing}")
        return cls(site=str(obj["site"]), text=str(obj["text"]))


def load_corpus_jsonl(path, strict: bool = True) -> list[CorpusDoc]:
    return _load_jsonl(path, CorpusDoc.from_json, strict)


def save_corpus_jsonl(docs, path) -> None:
    _save_jsonl(docs, path)


@dataclass
class BuildTawConfig:
    per_site_cap: int = 1000
    per_topic_cap: int = 3
    sim_threshold: float = 0.70
    target_size: int | None = None
    max_passage_words: int = 100

    def __post_init__(self):
        if self.per_site_cap < 1 or self.per_topic_cap < 1:
            raise ValueError("caps must be >= 1")
        if not -1.0 <= self.sim_threshold <= 1.0:
            raise ValueError(f"similarity threshold must be a cosine, got {self.sim_threshold}")


@dataclass
class AugmentConfig:
    max_passage_paraphrases: int = 16
    max_topic_paraphrases: int = 10

    def __post_init__(self):
        if self.max_passage_paraphrases < 0 or self.max_topic_paraphrases < 0:
            raise ValueError("paraphrase caps must be >= 0")


def first_passage(doc: CorpusDoc, max_words: int = 100) -> str | None:
    """First paragraph, truncated to ``max_words`` whitespace words;
    leading blank lines are skipped.  None for an empty document."""
    for paragraph in doc.text.split("\n\n"):
        words = paragraph.split()
        if words:
            return " ".join(words[:max_words])
    return None


def ner_skip(topic: str, tagger) -> bool:
    """True when the topic carries any entity class from the skip list."""
    return bool(set(tagger.classes(topic)) & SKIP_ENTITY_CLASSES)


@dataclass
class PassageIndex:
    """Exhaustive cosine index over (site, passage, unit vector) entries."""

    sites: list = field(default_factory=list)
    passages: list = field(default_factory=list)
    matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.passages)


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def build_passage_index(entries, embedder) -> PassageIndex:
    """``entries`` yields (site, passage); every passage is embedded."""
    index = PassageIndex()
    rows = []
    for site, passage in entries:
        rows.append(_unit(np.asarray(embedder.embed(passage), dtype=float)))
        index.sites.append(site)
        index.passages.append(passage)
    index.matrix = np.stack(rows) if rows else np.zeros((0, 0))
    return index


def nearest_similar(passage, index: PassageIndex, embedder, exclude_site: str | None = None):
    """Exact nearest neighbor by cosine over the index (exhaustive scan);
    ties break to the lowest insertion index.  None when nothing remains."""
    if len(index) == 0:
        return None
    query = _unit(np.asarray(embedder.embed(passage), dtype=float))
    sims = index.matrix @ query
    best_pos, best_sim = -1, -np.inf
    for pos, sim in enumerate(sims):
        if exclude_site is not None and index.sites[pos] == exclude_site:
            continue
        if sim > best_sim:
            best_pos, best_sim = pos, float(sim)
    if best_pos < 0:
        return None
    return index.passages[best_pos], index.sites[best_pos], float(np.clip(best_sim, -1.0, 1.0))


def build_taw_dataset(corpus, providers, config: BuildTawConfig) -> tuple[list[TawQuadruplet], dict]:
    """Quadruplet construction over a document stream.

    Per document: take the first passage, extract a topic from the
    noun-phrase candidates, enforce the per-topic cap, pair with the most
    similar passage from a different site above the cosine threshold, and
    paraphrase the topic unless it is a skip-listed named entity.
    Deterministic given the input order and seeded providers.
    """
    stats = {
        "documents": 0,
        "selected": 0,
        "emitted": 0,
        "dropped_site_cap": 0,
        "dropped_empty": 0,
        "dropped_no_noun_phrase": 0,
        "dropped_no_topic": 0,
        "dropped_topic_cap": 0,
        "dropped_no_neighbor": 0,
        "dropped_below_threshold": 0,
        "skipped_provider_error": 0,
        "deferred": 0,
        "ner_skipped_topics": 0,
    }
    site_counts: dict[str, int] = {}
    selected: list[tuple[CorpusDoc, str]] = []
    for doc in corpus:
        stats["documents"] += 1
        if site_counts.get(doc.site, 0) >= config.per_site_cap:
            stats["dropped_site_cap"] += 1
            continue
        passage = first_passage(doc, config.max_passage_words)
        if passage is None:
            stats["dropped_empty"] += 1
            continue
        site_counts[doc.site] = site_counts.get(doc.site, 0) + 1
        selected.append((doc, passage))
    stats["selected"] = len(selected)

    index_entries = []
    index_complete = True
    for doc, passage in selected:
        index_entries.append((doc.site, passage))
    try:
        index = build_passage_index(index_entries, providers)
    except MissingProviderResponse:
        # Embeddings must be complete before any pairing; queue the rest
        # of the corpus embeddings too, then defer the whole build.
        index_complete = False
        for _, passage in index_entries:
            try:
                providers.embed(passage)
            except MissingProviderResponse:
                pass
        index = PassageIndex()

    quads: list[TawQuadruplet] = []
    topic_counts: dict[str, int] = {}
    for doc, passage in selected:
        if config.target_size is not None and len(quads) >= config.target_size:
            break
        try:
            candidates = providers.noun_phrases(passage)
            if not candidates:
                stats["dropped_no_noun_phrase"] += 1
                continue
            topic = providers.extract(passage, candidates)
            if not topic:
                stats["dropped_no_topic"] += 1
                continue
            if topic not in candidates:
                raise ProviderJobError(f"extracted topic {topic!r} is not a candidate")
            if topic_counts.get(topic, 0) >= config.per_topic_cap:
                stats["dropped_topic_cap"] += 1
                continue
            if not index_complete:
                stats["deferred"] += 1
                continue
            neighbor = nearest_similar(passage, index, providers, exclude_site=doc.site)
            if neighbor is None:
                stats["dropped_no_neighbor"] += 1
                continue
            similar_passage, site_q, similarity = neighbor
            if similarity < config.sim_threshold:
                stats["dropped_below_threshold"] += 1
                continue
            if ner_skip(topic, providers):
                stats["ner_skipped_topics"] += 1
                paraphrase = topic
            else:
                paraphrases = providers.paraphrase_topic(topic)
                paraphrases = [p for p in paraphrases if p and p != topic]
                paraphrase = paraphrases[0] if paraphrases else topic
            quads.append(
                TawQuadruplet(
                    passage=passage,
                    topic=topic,
                    topic_paraphrase=paraphrase,
                    similar_passage=similar_passage,
                    site_p=doc.site,
                    site_q=site_q,
                    similarity=similarity,
                )
            )
            topic_counts[topic] = topic_counts.get(topic, 0) + 1
        except MissingProviderResponse:
            stats["deferred"] += 1
        except ProviderJobError as exc:
            stats["skipped_provider_error"] += 1
            log.warning("record skipped: %s", exc)
    stats["emitted"] = len(quads)
    return quads, stats


def split_taw_train_val(
    quads: list[TawQuadruplet], val_fraction: float = 0.1, seed: int = 0
) -> tuple[list[TawQuadruplet], list[TawQuadruplet]]:
    """Topic-disjoint split: no validation quadruplet shares a topic with
    the training side."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    topics = sorted({q.topic for q in quads})
    rng = np.random.default_rng(seed)
    rng.shuffle(topics)
    target = max(1, int(round(val_fraction * len(quads)))) if quads else 0
    val_topics: set[str] = set()
    count = 0
    by_topic: dict[str, int] = {}
    for q in quads:
        by_topic[q.topic] = by_topic.get(q.topic, 0) + 1
    for topic in topics:
        if count >= target:
            break
        val_topics.add(topic)
        count += by_topic[topic]
    train = [q for q in quads if q.topic not in val_topics]
    val = [q for q in quads if q.topic in val_topics]
    return train, val


def _dedup(variants, original: str, cap: int) -> list[str]:
    out = []
    for v in variants:
        if v and v != original and v not in out:
            out.append(v)
        if len(out) >= cap:
            break
    return out


def augment_vast(
    train: list[StanceExample], providers, config: AugmentConfig
) -> tuple[list[StanceExample], dict]:
    """Cross-product fan-out of passage and topic paraphrases.

    The output keeps every original and adds one record per (passage
    variant, topic variant) combination, all inheriting the parent's
    stance.  A failing provider falls back to the original text for that
    slot; named-entity topics are never paraphrased."""
    out: list[StanceExample] = []
    stats = {
        "inputs": len(train),
        "outputs": 0,
        "deferred": 0,
        "passage_variants": 0,
        "topic_variants": 0,
        "provider_errors": 0,
    }
    for ex in train:
        try:
            try:
                raw_pp = providers.paraphrase_passage(ex.passage, config.max_passage_paraphrases)
            except ProviderJobError as exc:
                log.warning("passage paraphrase failed for %s: %s", ex.id, exc)
                stats["provider_errors"] += 1
                raw_pp = []
            passage_variants = _dedup(raw_pp, ex.passage, config.max_passage_paraphrases)

            if config.max_topic_paraphrases == 0 or ner_skip(ex.topic, providers):
                topic_variants = []
            else:
                try:
                    raw_tp = providers.paraphrase_topic(ex.topic)
                except ProviderJobError as exc:
                    log.warning("topic paraphrase failed for %s: %s", ex.id, exc)
                    stats["provider_errors"] += 1
                    raw_tp = []
                topic_variants = _dedup(raw_tp, ex.topic, config.max_topic_paraphrases)
        except MissingProviderResponse:
            stats["deferred"] += 1
            continue

        stats["passage_variants"] += len(passage_variants)
        stats["topic_variants"] += len(topic_variants)
        for pi, passage in enumerate([ex.passage] + passage_variants):
            for ti, topic in enumerate([ex.topic] + topic_variants):
                if pi == 0 and ti == 0:
                    out.append(ex)
                else:
                    out.append(
                        replace(ex, id=f"{ex.id}~p{pi}t{ti}", passage=passage, topic=topic)
                    )
    stats["outputs"] = len(out)
    return out, stats
