"""Provider boundary for the dataset builders.

The builders call five model-shaped services (noun-phrase candidates stay
in-process): topic extraction, topic paraphrasing, passage paraphrasing,
text embedding, and entity tagging.  ``MockProviders`` answers all of them
deterministically so the whole pipeline runs offline; ``FileProviders``
speaks the directory-based batch protocol, answering from a response JSONL
and accumulating unanswered requests for an out-of-process worker.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from pathlib import Path

import numpy as np

from .encoder import split_text

log = logging.getLogger(__name__)

REQUEST_FILE = "requests.jsonl"
RESPONSE_GLOB = "responses*.jsonl"

PROVIDER_KINDS = ("extract_topic", "paraphrase_topic", "paraphrase_passage", "embed", "tag_entities")


class ProviderError(RuntimeError):
    """Base class for provider-boundary failures."""


class ProviderJobError(ProviderError):
    """The provider answered this job with an error; skip the record."""


class MissingProviderResponse(ProviderError):
    """No response on file yet; the request was queued for the worker."""


def request_id(kind: str, payload: dict) -> str:
    blob = kind + "\0" + json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


_DETERMINER_NP = re.compile(r"\b(?:the|a|an|this|these|those)\s+(\w+(?:\s+\w+)?)", re.IGNORECASE)
_CAPITALIZED_RUN = re.compile(r"\b([A-Z][a-z']+(?:\s+[A-Z][a-z']+)+)\b")


def heuristic_noun_phrases(text: str) -> list[str]:
    """Capitalized-sequence + determiner-noun candidates, lowercased,
    deduplicated in order of first appearance."""
    seen = []
    for match in _CAPITALIZED_RUN.finditer(text):
        cand = match.group(1).lower()
        if cand not in seen:
            seen.append(cand)
    for match in _DETERMINER_NP.finditer(text):
        cand = match.group(1).lower()
        if cand not in seen:
            seen.append(cand)
    return seen


_MOCK_PERSONS = {"abraham lincoln", "barack obama", "hillary clinton", "donald trump", "joe biden"}
_MOCK_GPES = {"france", "texas", "china", "paris", "canada", "america"}
_MOCK_TIME_WORDS = {"today", "tomorrow", "yesterday", "morning", "evening", "night"}
_MOCK_DATE_WORDS = {
    "january", "february", "march", "april", "may", "june",
    "july", "august", "september", "october", "november", "december",
}
_MOCK_ORDINALS = {"first", "second", "third", "fourth", "fifth"}


class MockProviders:
    """Deterministic stand-ins for the model-backed services.

    Every answer is a pure function of the input text, so repeated runs
    are byte-identical regardless of call order.
    """

    def __init__(self, seed: int = 0, embed_dim: int = 64):
        self.seed = seed
        self.embed_dim = embed_dim

    def noun_phrases(self, text: str) -> list[str]:
        return heuristic_noun_phrases(text)

    def extract(self, passage: str, candidates: list[str]) -> str | None:
        """The candidate mentioned most often in the passage, ties to the
        earliest candidate."""
        if not candidates:
            return None
        low = passage.lower()
        best, best_count = candidates[0], -1
        for cand in candidates:
            count = low.count(cand.lower())
            if count > best_count:
                best, best_count = cand, count
        return best

    def paraphrase_topic(self, topic: str) -> list[str]:
        variants = [f"the {topic}", f"{topic} issue", f"{topic} question"]
        out = []
        for v in variants:
            if v and v != topic and v not in out:
                out.append(v)
        return out[:10]

    def paraphrase_passage(self, passage: str, n: int) -> list[str]:
        if not passage:
            return []
        patterns = [
            "indeed {p}",
            "{p} to be sure",
            "frankly {p}",
            "{p} in any case",
            "notably {p}",
            "{p} all told",
            "clearly {p}",
            "{p} by all accounts",
            "certainly {p}",
            "{p} as things stand",
            "plainly {p}",
            "{p} for what it is worth",
            "evidently {p}",
            "{p} when all is said",
            "surely {p}",
            "{p} at the end of the day",
        ]
        out = []
        for pattern in patterns[: max(0, n)]:
            variant = pattern.format(p=passage)
            if variant != passage and variant not in out:
                out.append(variant)
        return out

    def embed(self, text: str) -> np.ndarray:
        """Hashed bag-of-words; identical texts embed identically."""
        vec = np.zeros(self.embed_dim)
        for token in split_text(text):
            digest = hashlib.sha256(f"{self.seed}:{token}".encode()).digest()
            vec[int.from_bytes(digest[:4], "little") % self.embed_dim] += 1.0
        return vec

    def classes(self, topic: str) -> set[str]:
        low = topic.strip().lower()
        tokens = set(split_text(low))
        found = set()
        if low in _MOCK_PERSONS:
            found.add("PERSON")
        if tokens & _MOCK_GPES:
            found.add("GPE")
        if tokens & _MOCK_TIME_WORDS:
            found.add("TIME")
        if tokens & _MOCK_DATE_WORDS:
            found.add("DATE")
        if tokens & _MOCK_ORDINALS:
            found.add("ORDINAL")
        if "%" in low or "percent" in tokens:
            found.add("PERCENT")
        if "$" in low or "dollars" in tokens:
            found.add("MONEY")
        if any(tok.isdigit() for tok in tokens):
            found.add("QUANTITY")
        return found


class FileProviders:
    """Directory-based batch protocol client.

    Answers come from ``responses*.jsonl`` inside the directory, keyed by
    content-addressed request ids.  Calls without an answer queue a request
    and raise :class:`MissingProviderResponse`; ``write_requests`` persists
    the queue as ``requests.jsonl`` for the out-of-process worker, and a
    rerun with the worker's responses on file completes deterministically.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.responses: dict[str, dict] = {}
        for path in sorted(self.directory.glob(RESPONSE_GLOB)):
            with path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self.responses[record["id"]] = record
        self.pending: dict[str, dict] = {}

    def _call(self, kind: str, payload: dict):
        rid = request_id(kind, payload)
        record = self.responses.get(rid)
        if record is None:
            self.pending[rid] = {"kind": kind, "id": rid, "payload": payload}
            raise MissingProviderResponse(f"no response on file for {kind} job {rid}")
        if not record.get("ok", False):
            raise ProviderJobError(f"{kind} job {rid} failed: {record.get('error')}")
        return record.get("result")

    def write_requests(self) -> Path | None:
        """Persist queued requests; returns the path, or None if none."""
        if not self.pending:
            return None
        path = self.directory / REQUEST_FILE
        with path.open("w", encoding="utf-8") as fh:
            for rid in sorted(self.pending):
                fh.write(json.dumps(self.pending[rid], sort_keys=True, ensure_ascii=False))
                fh.write("\n")
        return path

    # Interface methods mirror MockProviders.
    def noun_phrases(self, text: str) -> list[str]:
        return heuristic_noun_phrases(text)

    def extract(self, passage: str, candidates: list[str]) -> str | None:
        result = self._call("extract_topic", {"text": passage, "candidates": list(candidates)})
        return result

    def paraphrase_topic(self, topic: str) -> list[str]:
        return list(self._call("paraphrase_topic", {"topic": topic}))[:10]

    def paraphrase_passage(self, passage: str, n: int) -> list[str]:
        return list(self._call("paraphrase_passage", {"text": passage, "n": int(n)}))[: int(n)]

    def embed(self, text: str) -> np.ndarray:
        return np.asarray(self._call("embed", {"text": text}), dtype=float)

    def classes(self, topic: str) -> set[str]:
        return set(self._call("tag_entities", {"text": topic}))


def make_providers(spec: str, seed: int = 0):
    """``mock`` for the bundled deterministic providers, else a directory
    path for the batch protocol."""
    if spec == "mock":
        return MockProviders(seed=seed)
    return FileProviders(spec)
