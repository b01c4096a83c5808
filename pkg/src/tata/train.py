"""Training procedures: triplet pre-training for the topic-aware encoder,
supervised-contrastive pre-training for the topic-agnostic encoder, and
cross-entropy training of the fused classifier with early stopping on
validation macro F1.  Pre-trained encoders are frozen on return."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_encoder, load_model, save_encoder, save_model  # noqa: F401
from .data import StanceExample, TawQuadruplet
from .encoder import TransformerEncoder, Vocabulary, format_pair, pad_batch
from .evaluate import macro_f1, predict_all
from .losses import TagBatch, TawBatch, cross_entropy_loss, supervised_contrastive_loss, triplet_taw_loss
from .model import TataModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    pretrain_batch: int = 16
    train_batch: int = 32
    tau: float = 0.07
    taw_epochs: int = 1
    tag_epochs: int = 2
    dropout: float = 0.30
    patience: int = 3
    seed: int = 0
    margin: float = 0.0
    max_epochs: int = 50
    finite_checks: bool = False  # off in the hot loop; tests flip it on

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.pretrain_batch < 2:
            raise ValueError("contrastive stages need batch >= 2")
        if self.train_batch < 1:
            raise ValueError("train batch must be >= 1")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict.

    Only parameters with gradient tracking are taken; a batch whose
    gradients contain NaN/Inf is skipped whole and counted.
    """

    def __init__(self, params: dict, config: TrainConfig):
        self.params = {k: v for k, v in params.items() if v.requires_grad}
        self.config = config
        self.m = {k: np.zeros_like(v.values) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v.values) for k, v in self.params.items()}
        self.t = 0
        self.skipped_steps = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> bool:
        for name, p in self.params.items():
            if p.grad is None or not np.isfinite(p.grad).all():
                self.skipped_steps += 1
                log.warning("non-finite gradient in %s; step skipped (total skipped: %d)",
                            name, self.skipped_steps)
                return False
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p.values *= 1.0 - cfg.lr * cfg.weight_decay
            p.values -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        return True


def adamw_step(optimizer: AdamW) -> bool:
    """One update from the gradients currently held by the parameters."""
    return optimizer.step()


class EarlyStopper:
    """Track the best validation score; stop after ``patience`` epochs
    without strict improvement.  Ties keep the earliest epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, score: float) -> bool:
        """Returns True when training should stop."""
        if score > self.best:
            self.best = score
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, stream])


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _encode_pairs(encoder, vocab, pairs, training, rng):
    seqs = [format_pair(p, t, vocab, encoder.config.max_len) for p, t in pairs]
    ids, mask = pad_batch(seqs)
    _, cls = encoder.encode(ids, mask, training=training, rng=rng)
    return cls


def _taw_val_loss(encoder, vocab, quads, config) -> float:
    total, count = 0.0, 0
    for idx in _batches(len(quads), config.pretrain_batch, None):
        if len(idx) < 2:
            continue
        chunk = [quads[i] for i in idx]
        h_p = _encode_pairs(encoder, vocab, [(q.passage, q.topic) for q in chunk], False, None)
        h_q = _encode_pairs(
            encoder, vocab, [(q.similar_passage, q.topic_paraphrase) for q in chunk], False, None
        )
        total += triplet_taw_loss(TawBatch(h_p, h_q), margin=config.margin).item() * len(idx)
        count += len(idx)
    return total / count if count else 0.0


def pretrain_taw(
    encoder: TransformerEncoder,
    vocab: Vocabulary,
    train_quads: list[TawQuadruplet],
    val_quads: list[TawQuadruplet],
    config: TrainConfig,
) -> dict:
    """Triplet pre-training over topic-paired passages; the encoder is
    frozen on return.  Returns the loss history (validation loss is
    measured before training and after each epoch)."""
    optimizer = AdamW(encoder.parameters(), config)
    history = {"val_loss": [_taw_val_loss(encoder, vocab, val_quads, config)],
               "train_loss": [], "skipped_batches": 0}
    with ag.finite_checks(config.finite_checks):
        for epoch in range(1, config.taw_epochs + 1):
            shuffle = _epoch_rng(config.seed, epoch, 1)
            drop = _epoch_rng(config.seed, epoch, 2)
            epoch_loss, seen = 0.0, 0
            for idx in _batches(len(train_quads), config.pretrain_batch, shuffle):
                if len(idx) < 2:
                    history["skipped_batches"] += 1
                    warnings.warn("triplet batch of 1 skipped (no negatives)")
                    continue
                chunk = [train_quads[i] for i in idx]
                h_p = _encode_pairs(encoder, vocab, [(q.passage, q.topic) for q in chunk], True, drop)
                h_q = _encode_pairs(
                    encoder, vocab, [(q.similar_passage, q.topic_paraphrase) for q in chunk], True, drop
                )
                loss = triplet_taw_loss(TawBatch(h_p, h_q), margin=config.margin)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_loss += loss.item() * len(idx)
                seen += len(idx)
            history["train_loss"].append(epoch_loss / seen if seen else 0.0)
            history["val_loss"].append(_taw_val_loss(encoder, vocab, val_quads, config))
    history["skipped_steps"] = optimizer.skipped_steps
    encoder.freeze()
    return history


def _tag_val_loss(encoder, vocab, examples, config) -> float:
    total, count = 0.0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for idx in _batches(len(examples), config.pretrain_batch, None):
            if len(idx) < 2:
                continue
            chunk = [examples[i] for i in idx]
            cls = _encode_pairs(encoder, vocab, [(ex.passage, ex.topic) for ex in chunk], False, None)
            loss = supervised_contrastive_loss(
                TagBatch(cls, [ex.stance for ex in chunk]), tau=config.tau
            )
            total += loss.item() * len(idx)
            count += len(idx)
    return total / count if count else 0.0


def pretrain_tag(
    encoder: TransformerEncoder,
    vocab: Vocabulary,
    train_examples: list[StanceExample],
    val_examples: list[StanceExample],
    config: TrainConfig,
) -> dict:
    """Supervised-contrastive pre-training over stance labels; the encoder
    is frozen on return."""
    optimizer = AdamW(encoder.parameters(), config)
    history = {"val_loss": [_tag_val_loss(encoder, vocab, val_examples, config)],
               "train_loss": [], "skipped_batches": 0}
    with ag.finite_checks(config.finite_checks):
        for epoch in range(1, config.tag_epochs + 1):
            shuffle = _epoch_rng(config.seed, epoch, 3)
            drop = _epoch_rng(config.seed, epoch, 4)
            epoch_loss, seen = 0.0, 0
            for idx in _batches(len(train_examples), config.pretrain_batch, shuffle):
                if len(idx) < 2:
                    history["skipped_batches"] += 1
                    warnings.warn("contrastive batch of 1 skipped")
                    continue
                chunk = [train_examples[i] for i in idx]
                cls = _encode_pairs(encoder, vocab, [(ex.passage, ex.topic) for ex in chunk], True, drop)
                loss = supervised_contrastive_loss(
                    TagBatch(cls, [ex.stance for ex in chunk]), tau=config.tau
                )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_loss += loss.item() * len(idx)
                seen += len(idx)
            history["train_loss"].append(epoch_loss / seen if seen else 0.0)
            history["val_loss"].append(_tag_val_loss(encoder, vocab, val_examples, config))
    history["skipped_steps"] = optimizer.skipped_steps
    encoder.freeze()
    return history


def train_tata(
    model: TataModel,
    train_examples: list[StanceExample],
    val_examples: list[StanceExample],
    config: TrainConfig,
    checkpoint_path=None,
) -> dict:
    """Cross-entropy training with early stopping on validation macro F1.

    Keeps the parameters from the best epoch (ties to the earliest) and
    verifies after every epoch that the frozen feature encoders have not
    moved.  Returns the epoch history."""
    params = model.trainable_parameters()
    optimizer = AdamW(params, config)
    frozen_before = model.frozen_checksum()
    stopper = EarlyStopper(config.patience)
    best_state = {name: p.values.copy() for name, p in params.items()}
    history = {"epoch": [], "train_loss": [], "val_macro_f1": []}

    with ag.finite_checks(config.finite_checks):
        for epoch in range(1, config.max_epochs + 1):
            shuffle = _epoch_rng(config.seed, epoch, 5)
            drop = _epoch_rng(config.seed, epoch, 6)
            epoch_loss, seen = 0.0, 0
            for idx in _batches(len(train_examples), config.train_batch, shuffle):
                chunk = [train_examples[i] for i in idx]
                probs = model.forward_batch(
                    [ex.passage for ex in chunk], [ex.topic for ex in chunk],
                    training=True, rng=drop,
                )
                loss = cross_entropy_loss(probs, [ex.stance for ex in chunk])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_loss += loss.item() * len(idx)
                seen += len(idx)
            if model.frozen_checksum() != frozen_before:
                raise RuntimeError("frozen encoder parameters changed during training")

            preds = predict_all(model, val_examples, batch_size=config.train_batch)
            score = macro_f1(preds, [ex.stance for ex in val_examples]).macro
            history["epoch"].append(epoch)
            history["train_loss"].append(epoch_loss / seen if seen else 0.0)
            history["val_macro_f1"].append(score)
            if score > stopper.best:
                best_state = {name: p.values.copy() for name, p in params.items()}
            if stopper.update(epoch, score):
                break

    for name, p in params.items():
        p.values = best_state[name]
    history["best_epoch"] = stopper.best_epoch
    history["best_val_macro_f1"] = stopper.best
    history["skipped_steps"] = optimizer.skipped_steps
    if checkpoint_path is not None:
        save_model(model, checkpoint_path)
    return history


def write_history_csv(history: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_macro_f1"])
        for i, epoch in enumerate(history["epoch"]):
            writer.writerow([epoch, history["train_loss"][i], history["val_macro_f1"][i]])
