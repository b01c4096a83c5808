"""Measurement protocol: per-class and macro F1, zero/few-shot breakdowns,
phenomena accuracies, the fixed-target Pro/Against macro, lexical-similarity
correlation, and a 2-D PCA projection for cluster figures."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import PHENOMENA, StanceLabel
from .encoder import split_text

_CLASSES = (StanceLabel.PRO, StanceLabel.AGAINST, StanceLabel.NEUTRAL)


@dataclass
class EvalReport:
    """Per-class F1 plus their unweighted mean ("All")."""

    per_class: dict
    macro: float
    n: int
    counts: dict
    empty_classes: list = field(default_factory=list)
    split: str | None = None

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "n": self.n,
            "f1": dict(self.per_class),
            "all": self.macro,
            "counts": {k: dict(v) for k, v in self.counts.items()},
            "empty_classes": list(self.empty_classes),
        }


def macro_f1(preds, golds, split: str | None = None) -> EvalReport:
    """F1 per stance class with the 0-convention when P + R = 0; classes
    that are never predicted and never gold are flagged in the report."""
    preds = [StanceLabel(int(p)) for p in preds]
    golds = [StanceLabel(int(g)) for g in golds]
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} golds")
    per_class = {}
    counts = {}
    empty = []
    for cls in _CLASSES:
        tp = sum(1 for p, g in zip(preds, golds) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(preds, golds) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(preds, golds) if p != cls and g == cls)
        name = cls.canonical()
        counts[name] = {"tp": tp, "fp": fp, "fn": fn}
        denom = 2 * tp + fp + fn
        if denom == 0:
            per_class[name] = 0.0
            empty.append(name)
        else:
            per_class[name] = 2 * tp / denom
    macro = sum(per_class.values()) / len(per_class) if preds else 0.0
    return EvalReport(
        per_class=per_class,
        macro=macro,
        n=len(preds),
        counts=counts,
        empty_classes=empty,
        split=split,
    )


def evaluate_splits(model, test, batch_size: int = 32):
    """(zero-shot, few-shot, all) reports over a test set with seen flags."""
    preds = predict_all(model, test, batch_size=batch_size)
    zero_idx = [i for i, ex in enumerate(test) if not ex.seen]
    few_idx = [i for i, ex in enumerate(test) if ex.seen]

    def report(indices, name):
        return macro_f1(
            [preds[i] for i in indices], [test[i].stance for i in indices], split=name
        ) if indices else EvalReport(
            per_class={c.canonical(): 0.0 for c in _CLASSES},
            macro=0.0,
            n=0,
            counts={c.canonical(): {"tp": 0, "fp": 0, "fn": 0} for c in _CLASSES},
            empty_classes=[c.canonical() for c in _CLASSES],
            split=name,
        )

    return report(zero_idx, "zero-shot"), report(few_idx, "few-shot"), report(range(len(test)), "all")


def predict_all(model, examples, batch_size: int = 32) -> list[StanceLabel]:
    preds = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        preds.extend(model.predict_batch([ex.passage for ex in chunk], [ex.topic for ex in chunk]))
    return preds


@dataclass
class PhenomenaReport:
    cells: dict  # phenomenon -> {"accuracy": float|None, "n": int}

    def to_json(self) -> dict:
        return {k: dict(v) for k, v in self.cells.items()}


def phenomena_accuracy(preds, golds, flags) -> PhenomenaReport:
    """Accuracy per linguistic phenomenon; flags overlap, so an example
    counts toward every phenomenon it carries."""
    if not (len(preds) == len(golds) == len(flags)):
        raise ValueError("predictions, golds, and flags must align")
    cells = {}
    for phenomenon in PHENOMENA:
        hits = total = 0
        for p, g, f in zip(preds, golds, flags):
            if phenomenon in f:
                total += 1
                hits += int(StanceLabel(int(p)) == StanceLabel(int(g)))
        cells[phenomenon] = {"accuracy": hits / total if total else None, "n": total}
    return PhenomenaReport(cells)


@dataclass
class Sem16Score:
    """Pro/Against macro; Neutral stays in the confusion matrix only."""

    score: float
    f1_pro: float
    f1_against: float
    confusion: list  # 3x3, rows gold, cols predicted

    def to_json(self) -> dict:
        return {
            "score": self.score,
            "f1_pro": self.f1_pro,
            "f1_against": self.f1_against,
            "confusion": self.confusion,
        }


def sem16_score(preds, golds) -> Sem16Score:
    report = macro_f1(preds, golds)
    confusion = [[0] * 3 for _ in range(3)]
    for p, g in zip(preds, golds):
        confusion[int(g)][int(p)] += 1
    f1_pro = report.per_class["Pro"]
    f1_against = report.per_class["Against"]
    return Sem16Score(
        score=(f1_pro + f1_against) / 2.0,
        f1_pro=f1_pro,
        f1_against=f1_against,
        confusion=confusion,
    )


class WordEmbeddings:
    """Token -> vector map from a text file: token then floats per line."""

    def __init__(self, vectors: dict):
        dims = {v.shape for v in vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"embedding dimensions differ: {sorted(dims)}")
        self.vectors = vectors
        self.dim = next(iter(dims))[0] if vectors else 0

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str):
        return self.vectors.get(token)

    @classmethod
    def load(cls, path) -> "WordEmbeddings":
        vectors = {}
        with Path(path).open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                try:
                    vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
                except ValueError as exc:
                    raise ValueError(f"{path} line {lineno}: bad float") from exc
        return cls(vectors)


def topic_vector(topic: str, emb: WordEmbeddings):
    """Mean of in-vocabulary token vectors; None when every token is OOV."""
    found = [emb.get(tok) for tok in split_text(topic) if tok in emb]
    if not found:
        return None
    return np.mean(found, axis=0)


@dataclass
class CorrelationResult:
    defined: bool
    r: float | None = None
    p: float | None = None
    n: int = 0
    skipped_topics: int = 0
    reason: str | None = None

    def to_json(self) -> dict:
        return {
            "defined": self.defined,
            "r": self.r,
            "p": self.p,
            "n": self.n,
            "skipped_topics": self.skipped_topics,
            "reason": self.reason,
        }


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt(float((xd * xd).sum()) * float((yd * yd).sum()))
    if denom == 0.0:
        raise ZeroDivisionError("zero variance")
    return float((xd * yd).sum()) / denom


def _student_t_pdf(t: float, df: int) -> float:
    log_coef = math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0) - 0.5 * math.log(df * math.pi)
    return math.exp(log_coef - ((df + 1) / 2.0) * math.log1p(t * t / df))


def student_t_two_tailed_p(t: float, df: int) -> float:
    """2 * P(T >= |t|) via composite Gauss-Legendre integration of the pdf."""
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    t = abs(float(t))
    if t == 0.0:
        return 1.0
    nodes, weights = np.polynomial.legendre.leggauss(24)
    segments = max(8, int(math.ceil(t)) * 4)
    edges = np.linspace(0.0, t, segments + 1)
    integral = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = (hi + lo) / 2.0, (hi - lo) / 2.0
        integral += half * sum(w * _student_t_pdf(mid + half * x, df) for x, w in zip(nodes, weights))
    return max(0.0, 1.0 - 2.0 * integral)


def lexical_similarity_correlation(
    test_topic_rates,
    train_topics,
    emb: WordEmbeddings,
    threshold: float = 0.90,
) -> CorrelationResult:
    """Correlate each test topic's count of lexically similar training
    topics (cosine above the threshold) with its per-topic correct rate.

    ``test_topic_rates`` holds (topic, fraction correct) pairs; topics with
    no in-vocabulary tokens are excluded and counted.
    """
    train_vecs = [v for v in (topic_vector(t, emb) for t in train_topics) if v is not None]
    xs, ys = [], []
    skipped = 0
    for topic, rate in test_topic_rates:
        vec = topic_vector(topic, emb)
        if vec is None:
            skipped += 1
            continue
        count = 0
        for tv in train_vecs:
            denom = np.linalg.norm(vec) * np.linalg.norm(tv)
            if denom > 0 and float(vec @ tv) / denom > threshold:
                count += 1
        xs.append(count)
        ys.append(float(rate))
    if len(xs) < 3:
        raise ValueError(f"need >= 3 test topics with defined vectors, got {len(xs)}")
    try:
        r = pearson_r(xs, ys)
    except ZeroDivisionError:
        return CorrelationResult(defined=False, n=len(xs), skipped_topics=skipped, reason="zero variance")
    n = len(xs)
    if abs(r) >= 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = student_t_two_tailed_p(t, n - 2)
    return CorrelationResult(defined=True, r=r, p=p, n=n, skipped_topics=skipped)


def per_topic_correct_rates(examples, preds) -> list:
    """(topic, fraction of that topic's examples predicted correctly)."""
    totals: dict[str, list[int]] = {}
    for ex, pred in zip(examples, preds):
        cell = totals.setdefault(ex.topic, [0, 0])
        cell[0] += int(StanceLabel(int(pred)) == ex.stance)
        cell[1] += 1
    return [(topic, hits / n) for topic, (hits, n) in sorted(totals.items())]


def _power_iteration(cov: np.ndarray, max_iters: int = 1000, tol: float = 1e-13):
    d = cov.shape[0]
    # Deterministic start with a ramp so no coordinate symmetry survives.
    v = 1.0 + np.arange(d) * 1e-3
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return np.zeros(d), 0.0
        w /= norm
        if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
            v = w
            break
        v = w
    lam = float(v @ cov @ v)
    return v, lam


def _fix_sign(v: np.ndarray) -> np.ndarray:
    for coord in v:
        if abs(coord) > 1e-12:
            return v if coord > 0 else -v
    return v


def project_embeddings(hiddens, labels):
    """Top-2 PCA projection (power iteration with deflation).

    Returns rows of (x, y, label); the sign convention makes the first
    nonzero loading of each component positive.
    """
    x = np.asarray(hiddens, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError(f"need an [N >= 3, E] matrix, got shape {x.shape}")
    labels = list(labels)
    if len(labels) != x.shape[0]:
        raise ValueError(f"{x.shape[0]} rows but {len(labels)} labels")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    v1, lam1 = _power_iteration(cov)
    v2, _ = _power_iteration(cov - lam1 * np.outer(v1, v1))
    v1, v2 = _fix_sign(v1), _fix_sign(v2)
    coords = centered @ np.stack([v1, v2], axis=1)
    return [(float(cx), float(cy), str(label)) for (cx, cy), label in zip(coords, labels)]


def write_projection_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label"])
        writer.writerows(rows)
