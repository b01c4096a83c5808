"""The fused stance classifier and its ablation variants.

Two frozen encoders supply features: the topic-aware encoder's per-token
states are pooled by scaled dot-product attention keyed on the trainable
encoder's topic vector, and the trainable encoder's per-token states are
pooled by attention keyed on the topic-agnostic [CLS] vector.  The pooled
vectors are concatenated with the joint [CLS] state (the residual path)
and classified by a two-layer feed-forward head with softmax output.

Variants: the baseline drops both attention branches (head over the joint
[CLS] only), and the single-branch variants drop one of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import StanceLabel
from .encoder import CLS_ID, SEP_ID, TransformerEncoder, Vocabulary, format_pair, pad_batch, tokenize


class ModelKind(str, Enum):
    BASELINE = "baseline"
    TAG_ONLY = "tag"
    TAW_ONLY = "taw"
    TATA = "tata"


@dataclass
class FusionWeights:
    """Learned E x E maps for the two attention branches; the scale is
    fixed at 1/sqrt(E) and never trained."""

    w_taw: Tensor | None
    w_tag: Tensor | None
    lam: float

    @classmethod
    def create(cls, kind: ModelKind, hidden: int, rng: np.random.Generator) -> "FusionWeights":
        def mat():
            return Tensor(rng.normal(0.0, 0.02, size=(hidden, hidden)), requires_grad=True)

        w_taw = mat() if kind in (ModelKind.TAW_ONLY, ModelKind.TATA) else None
        w_tag = mat() if kind in (ModelKind.TAG_ONLY, ModelKind.TATA) else None
        return cls(w_taw=w_taw, w_tag=w_tag, lam=1.0 / math.sqrt(hidden))


def _fused_attention(h_tokens: Tensor, h_query: Tensor, w: Tensor, lam: float, mask=None):
    """Convex combination of token states, weighted by softmax of the
    lam-scaled dot products between each token state and W @ query.

    Accepts a single example ([T, E] tokens with an [E] query) or a batch
    ([B, T, E] with [B, E]).  Returns (pooled, weights).
    """
    single = len(h_tokens.shape) == 2
    if single:
        h_tokens = ag.reshape(h_tokens, (1,) + tuple(h_tokens.shape))
        h_query = ag.reshape(h_query, (1,) + tuple(h_query.shape))
    b, t, e = h_tokens.shape
    if t < 1:
        raise ValueError("attention needs at least one token state")
    if mask is None:
        mask = np.ones((b, t))
    else:
        mask = np.asarray(mask, dtype=float).reshape(b, t)
    if (mask.sum(axis=1) == 0).any():
        raise ValueError("attention over fully masked token states is undefined")

    keyed = ag.matmul(h_query, ag.transpose(w, (1, 0)))  # rows: (W @ query)^T
    scores = ag.scale(ag.tensor_sum(ag.mul(h_tokens, ag.reshape(keyed, (b, 1, e))), axis=-1), lam)
    scores = scores + Tensor((1.0 - mask) * -1e30)
    weights = ag.softmax(scores, axis=-1)
    pooled = ag.tensor_sum(ag.mul(ag.reshape(weights, (b, t, 1)), h_tokens), axis=1)
    if single:
        pooled = ag.reshape(pooled, (e,))
        weights = ag.reshape(weights, (t,))
    return pooled, weights


def topic_attention(h_taw_tokens: Tensor, h_topic: Tensor, fusion: FusionWeights, mask=None):
    """Pool topic-aware token states against the topic vector."""
    if fusion.w_taw is None:
        raise ValueError("this model kind carries no topic-aware attention weights")
    return _fused_attention(h_taw_tokens, h_topic, fusion.w_taw, fusion.lam, mask)


def stance_attention(h_pt_tokens: Tensor, h_tag: Tensor, fusion: FusionWeights, mask=None):
    """Pool joint passage|topic token states against the stance vector."""
    if fusion.w_tag is None:
        raise ValueError("this model kind carries no topic-agnostic attention weights")
    return _fused_attention(h_pt_tokens, h_tag, fusion.w_tag, fusion.lam, mask)


def head_input_dim(kind: ModelKind, hidden: int) -> int:
    return {
        ModelKind.BASELINE: hidden,
        ModelKind.TAG_ONLY: 2 * hidden,
        ModelKind.TAW_ONLY: 2 * hidden,
        ModelKind.TATA: 3 * hidden,
    }[kind]


class TataModel:
    """Frozen feature encoders + trainable joint encoder, fusion, and head."""

    def __init__(
        self,
        kind: ModelKind,
        vocab: Vocabulary,
        joint_encoder: TransformerEncoder,
        taw_encoder: TransformerEncoder | None = None,
        tag_encoder: TransformerEncoder | None = None,
        head_dropout: float = 0.30,
        seed: int = 0,
    ):
        kind = ModelKind(kind)
        needs_taw = kind in (ModelKind.TAW_ONLY, ModelKind.TATA)
        needs_tag = kind in (ModelKind.TAG_ONLY, ModelKind.TATA)
        if needs_taw and taw_encoder is None:
            raise ValueError(f"kind {kind.value} requires a topic-aware encoder")
        if needs_tag and tag_encoder is None:
            raise ValueError(f"kind {kind.value} requires a topic-agnostic encoder")
        for name, enc in (("taw", taw_encoder), ("tag", tag_encoder)):
            if enc is not None and not enc.frozen:
                raise ValueError(f"{name} encoder must be frozen before use as a feature layer")
            if enc is not None and enc.config.hidden != joint_encoder.config.hidden:
                raise ValueError("all encoders must share the hidden dimension")
            if enc is not None and enc.config.max_len != joint_encoder.config.max_len:
                raise ValueError("all encoders must share max_len")
            if enc is not None and enc.config.vocab_size != joint_encoder.config.vocab_size:
                raise ValueError("all encoders must share the vocabulary")
        if not 0.0 <= head_dropout < 1.0:
            raise ValueError(f"head dropout must be in [0, 1), got {head_dropout}")

        self.kind = kind
        self.vocab = vocab
        self.joint_encoder = joint_encoder
        self.taw_encoder = taw_encoder if needs_taw else None
        self.tag_encoder = tag_encoder if needs_tag else None
        self.head_dropout = head_dropout

        e = joint_encoder.config.hidden
        rng = np.random.default_rng(seed)
        self.fusion = FusionWeights.create(kind, e, rng)
        in_dim = head_input_dim(kind, e)
        self.head = {
            "w1": Tensor(rng.normal(0.0, 0.02, size=(in_dim, e)), requires_grad=True),
            "b1": Tensor(np.zeros(e), requires_grad=True),
            "w2": Tensor(rng.normal(0.0, 0.02, size=(e, 3)), requires_grad=True),
            "b2": Tensor(np.zeros(3), requires_grad=True),
        }
        # Frozen encoders are deterministic feature extractors; cache their
        # per-sequence outputs across batches.
        self._frozen_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def max_len(self) -> int:
        return self.joint_encoder.config.max_len

    def trainable_parameters(self) -> dict[str, Tensor]:
        params = {f"joint.{k}": v for k, v in self.joint_encoder.parameters().items()}
        if self.fusion.w_taw is not None:
            params["fusion.w_taw"] = self.fusion.w_taw
        if self.fusion.w_tag is not None:
            params["fusion.w_tag"] = self.fusion.w_tag
        for k, v in self.head.items():
            params[f"head.{k}"] = v
        return params

    def frozen_parameters(self) -> dict[str, Tensor]:
        params = {}
        if self.taw_encoder is not None:
            params.update({f"taw.{k}": v for k, v in self.taw_encoder.parameters().items()})
        if self.tag_encoder is not None:
            params.update({f"tag.{k}": v for k, v in self.tag_encoder.parameters().items()})
        return params

    def frozen_checksum(self) -> str:
        import hashlib

        digest = hashlib.sha256()
        for name, tensor in sorted(self.frozen_parameters().items()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(tensor.values).tobytes())
        return digest.hexdigest()

    def _pair_sequences(self, passages, topics) -> list[list[int]]:
        return [format_pair(p, t, self.vocab, self.max_len) for p, t in zip(passages, topics)]

    def _topic_sequences(self, topics) -> list[list[int]]:
        return [[CLS_ID] + tokenize(t, self.vocab)[: self.max_len - 2] + [SEP_ID] for t in topics]

    def _frozen_encode(self, encoder: TransformerEncoder, role: str, seqs: list[list[int]]):
        """Eval-mode encode through a frozen encoder with per-sequence caching.

        Returns (token states [B, T, E], cls [B, E], mask [B, T]) as plain
        arrays; gradients never flow into frozen features.
        """
        missing = [seq for seq in seqs if (role, tuple(seq)) not in self._frozen_cache]
        if missing:
            ids, mask = pad_batch(missing)
            hiddens, cls = encoder.encode(ids, mask, training=False)
            for row, seq in enumerate(missing):
                self._frozen_cache[(role, tuple(seq))] = (
                    hiddens.values[row, : len(seq)].copy(),
                    cls.values[row].copy(),
                )
        width = max(len(s) for s in seqs)
        e = encoder.config.hidden
        out_h = np.zeros((len(seqs), width, e))
        out_c = np.zeros((len(seqs), e))
        out_m = np.zeros((len(seqs), width))
        for row, seq in enumerate(seqs):
            h, c = self._frozen_cache[(role, tuple(seq))]
            out_h[row, : len(seq)] = h
            out_c[row] = c
            out_m[row, : len(seq)] = 1.0
        return out_h, out_c, out_m

    def forward_batch(self, passages, topics, training: bool = False, rng=None) -> Tensor:
        """Class probabilities [B, 3] over (Pro, Against, Neutral)."""
        passages, topics = list(passages), list(topics)
        pair_seqs = self._pair_sequences(passages, topics)
        ids, mask = pad_batch(pair_seqs)

        h_pt_tokens, h_pt_cls = self.joint_encoder.encode(ids, mask, training=training, rng=rng)

        features = []
        if self.kind in (ModelKind.TAW_ONLY, ModelKind.TATA):
            taw_h, _, taw_mask = self._frozen_encode(self.taw_encoder, "taw", pair_seqs)
            topic_seqs = self._topic_sequences(topics)
            t_ids, t_mask = pad_batch(topic_seqs)
            _, h_topic = self.joint_encoder.encode(t_ids, t_mask, training=training, rng=rng)
            r_topic, _ = topic_attention(Tensor(taw_h), h_topic, self.fusion, mask=taw_mask)
            features.append(r_topic)
        if self.kind in (ModelKind.TAG_ONLY, ModelKind.TATA):
            _, tag_cls, _ = self._frozen_encode(self.tag_encoder, "tag", pair_seqs)
            r_stance, _ = stance_attention(h_pt_tokens, Tensor(tag_cls), self.fusion, mask=mask)
            features.append(r_stance)
        features.append(h_pt_cls)  # residual path
        feats = features[0] if len(features) == 1 else ag.concat(features, axis=-1)

        hidden = ag.gelu(ag.matmul(feats, self.head["w1"]) + self.head["b1"])
        hidden = ag.dropout(hidden, self.head_dropout, training, rng)
        logits = ag.matmul(hidden, self.head["w2"]) + self.head["b2"]
        return ag.softmax(logits, axis=-1)

    def forward(self, passage: str, topic: str, training: bool = False, rng=None) -> Tensor:
        probs = self.forward_batch([passage], [topic], training=training, rng=rng)
        return ag.reshape(probs, (3,))

    def predict_batch(self, passages, topics) -> list[StanceLabel]:
        probs = self.forward_batch(passages, topics, training=False)
        # argmax takes the first maximum: ties resolve Pro < Against < Neutral.
        return [StanceLabel(int(i)) for i in probs.values.argmax(axis=-1)]

    def predict(self, passage: str, topic: str) -> StanceLabel:
        return self.predict_batch([passage], [topic])[0]
