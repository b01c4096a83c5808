"""Tokenizer, vocabulary, and a small pre-norm transformer encoder.

Inputs are passage/topic pairs laid out as [CLS] passage [SEP] topic
[SEP]; the encoder returns per-token hidden states plus the [CLS] vector
used as the pooled representation.  The tokenizer is a deterministic
lowercase whitespace/punctuation splitter over a corpus-built vocabulary;
the Vocabulary abstraction leaves room to swap in a subword scheme.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

SPECIAL_TOKENS = ("[CLS]", "[SEP]", "[PAD]", "[UNK]")
CLS_ID, SEP_ID, PAD_ID, UNK_ID = 0, 1, 2, 3


class Vocabulary:
    """Dense token -> id map with the four specials pinned at ids 0-3."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            tokens = list(SPECIAL_TOKENS) + tokens
        self.id_to_token = tokens
        self.token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    @classmethod
    def build(cls, texts, min_count: int = 1) -> "Vocabulary":
        counts = Counter()
        for text in texts:
            counts.update(split_text(text))
        # Frequency-major, then lexicographic: deterministic ids.
        kept = sorted(
            (tok for tok, c in counts.items() if c >= min_count),
            key=lambda tok: (-counts[tok], tok),
        )
        return cls(kept)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise ValueError(f"vocabulary file {path} does not start with {SPECIAL_TOKENS}")
        return cls(lines)


def split_text(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.lookup(tok) for tok in split_text(text)]


def format_pair(passage: str, topic: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """[CLS] passage [SEP] topic [SEP], truncating the passage first.

    The topic survives truncation because every downstream objective
    conditions on it.  An empty passage yields [CLS] [SEP] topic [SEP].
    """
    topic_ids = tokenize(topic, vocab)
    budget = max_len - 3 - len(topic_ids)
    if budget < 0:
        raise ValueError(
            f"topic occupies {len(topic_ids)} tokens; limit is {max_len - 3} for max_len={max_len}"
        )
    passage_ids = tokenize(passage, vocab)[: budget]
    return [CLS_ID] + passage_ids + [SEP_ID] + topic_ids + [SEP_ID]


def pad_batch(sequences) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to the batch max with [PAD]; mask marks real tokens."""
    width = max(len(s) for s in sequences)
    ids = np.full((len(sequences), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(sequences), width))
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = 1.0
    return ids, mask


@dataclass
class EncoderConfig:
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ffn: int | None = None
    max_len: int = 64
    vocab_size: int = 0
    dropout: float = 0.30

    def __post_init__(self):
        if self.ffn is None:
            self.ffn = 4 * self.hidden
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if not 8 <= self.max_len <= 512:
            raise ValueError(f"max_len must be in [8, 512], got {self.max_len}")
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_json(self) -> dict:
        return {
            "hidden": self.hidden,
            "layers": self.layers,
            "heads": self.heads,
            "ffn": self.ffn,
            "max_len": self.max_len,
            "vocab_size": self.vocab_size,
            "dropout": self.dropout,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderConfig":
        return cls(**obj)


class TransformerEncoder:
    """Pre-norm self-attention stack over learned token + position embeddings."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        if config.vocab_size < len(SPECIAL_TOKENS):
            raise ValueError(f"vocab_size must cover the specials, got {config.vocab_size}")
        self.config = config
        self.frozen = False
        rng = np.random.default_rng(seed)
        e, f = config.hidden, config.ffn

        def normal(shape):
            return Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

        def ones(shape):
            return Tensor(np.ones(shape), requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        params: dict[str, Tensor] = {
            "tok_emb": normal((config.vocab_size, e)),
            "pos_emb": normal((config.max_len, e)),
            "ln_f.g": ones(e),
            "ln_f.b": zeros(e),
        }
        for i in range(config.layers):
            p = f"l{i}."
            params[p + "ln1.g"] = ones(e)
            params[p + "ln1.b"] = zeros(e)
            for name in ("wq", "wk", "wv", "wo"):
                params[p + name] = normal((e, e))
            for name in ("bq", "bk", "bv", "bo"):
                params[p + name] = zeros(e)
            params[p + "ln2.g"] = ones(e)
            params[p + "ln2.b"] = zeros(e)
            params[p + "w1"] = normal((e, f))
            params[p + "b1"] = zeros(f)
            params[p + "w2"] = normal((f, e))
            params[p + "b2"] = zeros(e)
        self.params = params

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def freeze(self) -> None:
        """Exclude every parameter from gradient tracking permanently."""
        self.frozen = True
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None

    def clone(self) -> "TransformerEncoder":
        """Deep copy with the same config; the copy is trainable."""
        other = TransformerEncoder(self.config, seed=0)
        for name, t in self.params.items():
            other.params[name] = Tensor(t.values.copy(), requires_grad=True)
        return other

    def checksum(self) -> str:
        import hashlib

        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name].values).tobytes())
        return digest.hexdigest()

    def encode(
        self,
        ids: np.ndarray,
        mask: np.ndarray | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
        collect_attn: list | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Returns (per-token hiddens [B, T, E], cls [B, E]).

        [PAD] positions are masked out of attention keys, so padding a
        batch never changes the [CLS] state of its rows.  Frozen encoders
        are always run with ``training=False`` by their callers.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError(f"expected [B, T] token ids, got shape {ids.shape}")
        b, t = ids.shape
        cfg = self.config
        if t > cfg.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {cfg.max_len}")
        if ids.max() >= cfg.vocab_size:
            raise ValueError(f"token id {ids.max()} out of range for vocab size {cfg.vocab_size}")
        if mask is None:
            mask = np.ones((b, t))
        p = self.params
        drop = cfg.dropout if training else 0.0

        x = ag.embedding(p["tok_emb"], ids) + ag.embedding(p["pos_emb"], np.arange(t))
        x = ag.dropout(x, drop, training, rng)

        # Additive key mask: -1e30 at [PAD] keys vanishes under softmax.
        attn_bias = Tensor(((1.0 - mask) * -1e30)[:, None, None, :])
        heads, head_dim = cfg.heads, cfg.hidden // cfg.heads
        scaling = 1.0 / math.sqrt(head_dim)

        def split_heads(m: Tensor) -> Tensor:
            return ag.transpose(ag.reshape(m, (b, t, heads, head_dim)), (0, 2, 1, 3))

        for i in range(cfg.layers):
            l = f"l{i}."
            h = ag.layer_norm(x, p[l + "ln1.g"], p[l + "ln1.b"])
            q = split_heads(ag.matmul(h, p[l + "wq"]) + p[l + "bq"])
            k = split_heads(ag.matmul(h, p[l + "wk"]) + p[l + "bk"])
            v = split_heads(ag.matmul(h, p[l + "wv"]) + p[l + "bv"])
            scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), scaling) + attn_bias
            attn = ag.softmax(scores, axis=-1)
            if collect_attn is not None:
                collect_attn.append(attn.values.copy())
            attn = ag.dropout(attn, drop, training, rng)
            ctx = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (b, t, cfg.hidden))
            out = ag.matmul(ctx, p[l + "wo"]) + p[l + "bo"]
            x = x + ag.dropout(out, drop, training, rng)

            h2 = ag.layer_norm(x, p[l + "ln2.g"], p[l + "ln2.b"])
            inner = ag.gelu(ag.matmul(h2, p[l + "w1"]) + p[l + "b1"])
            ff = ag.matmul(inner, p[l + "w2"]) + p[l + "b2"]
            x = x + ag.dropout(ff, drop, training, rng)

        hiddens = ag.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
        cls = ag.take(hiddens, 0, axis=1)
        return hiddens, cls
