"""Pre-training objectives and the classification loss.

The topic-aware objective is a batch triplet loss over squared Euclidean
distances between paired hidden vectors; negatives for an anchor are the
positives of the other pairs in the batch.  The topic-agnostic objective
is a supervised contrastive loss over cosine similarities with same-label
pairs as positives.  Training the classifier head minimizes cross-entropy
over the three stance probabilities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class TawBatch:
    """Paired anchor/positive hidden vectors; row i of both sides belongs
    to the same (noisy) topic."""

    anchors: Tensor
    positives: Tensor

    def __post_init__(self):
        if self.anchors.shape != self.positives.shape:
            raise ValueError(
                f"anchor/positive shapes differ: {self.anchors.shape} vs {self.positives.shape}"
            )
        if len(self.anchors.shape) != 2:
            raise ValueError(f"expected [N, E] hiddens, got shape {self.anchors.shape}")
        if self.anchors.shape[0] < 2:
            raise ValueError("triplet batch needs at least 2 pairs (no negatives otherwise)")


@dataclass
class TagBatch:
    """Hidden vectors with their stance labels for in-batch contrast."""

    hiddens: Tensor
    stances: list

    def __post_init__(self):
        if len(self.hiddens.shape) != 2:
            raise ValueError(f"expected [N, E] hiddens, got shape {self.hiddens.shape}")
        if self.hiddens.shape[0] != len(self.stances):
            raise ValueError(
                f"{self.hiddens.shape[0]} hiddens but {len(self.stances)} stance labels"
            )
        if len(self.stances) < 2:
            raise ValueError("contrastive batch needs at least 2 examples")


def triplet_taw_loss(batch: TawBatch, margin: float = 0.0) -> Tensor:
    """Mean over anchors of sum_k max(0, margin + d2(p_i, q_i) - d2(p_i, q_k)).

    Distances are squared Euclidean; the default margin of 0 matches the
    displayed objective, which carries no margin term.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    h_p, h_q = batch.anchors, batch.positives
    n = h_p.shape[0]

    pp = ag.tensor_sum(ag.mul(h_p, h_p), axis=-1).reshape((n, 1))
    qq = ag.tensor_sum(ag.mul(h_q, h_q), axis=-1).reshape((1, n))
    cross = ag.matmul(h_p, ag.transpose(h_q, (1, 0)))
    dist2 = pp + qq - ag.scale(cross, 2.0)  # dist2[i, k] = ||p_i - q_k||^2

    eye = np.eye(n)
    pos = ag.tensor_sum(ag.mul(dist2, Tensor(eye)), axis=-1, keepdims=True)
    hinge = ag.relu(pos + margin - dist2)
    off_diag = ag.mul(hinge, Tensor(1.0 - eye))
    return ag.scale(ag.tensor_sum(off_diag), 1.0 / n)


def supervised_contrastive_loss(batch: TagBatch, tau: float = 0.07) -> Tensor:
    """In-batch supervised contrastive loss over cosine similarities.

    Anchors with no same-label partner in the batch contribute log(0) under
    the raw formula; they are skipped and the mean is taken over the
    anchors that remain.  If every anchor is skipped the loss is defined
    as 0 and a warning is emitted.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    h = batch.hiddens
    n = h.shape[0]
    labels = np.asarray([int(s) for s in batch.stances])

    off_diag = 1.0 - np.eye(n)
    positives = (labels[:, None] == labels[None, :]).astype(float) * off_diag
    kept = positives.sum(axis=1) > 0
    n_kept = int(kept.sum())
    if n_kept == 0:
        warnings.warn("contrastive batch has no positive pairs at all; loss defined as 0")
        return ag.scale(ag.tensor_sum(h), 0.0)

    norms = ag.l2_norm(h, axis=-1, keepdims=True)
    unit = ag.div(h, norms)
    cos = ag.matmul(unit, ag.transpose(unit, (1, 0)))
    logits = ag.scale(cos, 1.0 / tau)
    # Rowwise max subtraction (as a constant) keeps exp in range; the
    # num/den ratio is invariant to it.
    shift = Tensor(logits.values.max(axis=-1, keepdims=True))
    weights = ag.mul(ag.exp(logits - shift), Tensor(off_diag))

    numer = ag.tensor_sum(ag.mul(weights, Tensor(positives)), axis=-1)
    denom = ag.tensor_sum(weights, axis=-1)
    # Skipped anchors get numerator 0; substitute 1 so log is defined,
    # then mask their term out.
    keep_mask = kept.astype(float)
    safe_numer = numer + Tensor(1.0 - keep_mask)
    per_anchor = ag.log(safe_numer) - ag.log(denom)
    total = ag.tensor_sum(ag.mul(per_anchor, Tensor(keep_mask)))
    return ag.scale(total, -1.0 / n_kept)


def cross_entropy_loss(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the gold class, floored at 1e-12."""
    if len(probs.shape) != 2:
        raise ValueError(f"expected [B, C] probabilities, got shape {probs.shape}")
    b, c = probs.shape
    idx = np.asarray([int(v) for v in labels])
    if idx.shape != (b,):
        raise ValueError(f"{b} probability rows but {idx.size} labels")
    if idx.size and (idx.min() < 0 or idx.max() >= c):
        raise ValueError(f"label out of range [0, {c}): {idx.tolist()}")
    sums = probs.values.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), idx] = 1.0
    picked = ag.tensor_sum(ag.mul(probs, Tensor(onehot)), axis=-1)
    floored = ag.clip_min(picked, 1e-12)
    return ag.scale(ag.tensor_sum(ag.log(floored)), -1.0 / b)
