import numpy as np
import pytest

from tata.encoder import EncoderConfig, TransformerEncoder, Vocabulary


@pytest.fixture
def tiny_vocab():
    return Vocabulary.build([
        "abraham lincoln was here today !",
        "guns and butter people",
        "many locals support the solar farms",
        "a b c d e f g h",
    ])


@pytest.fixture
def tiny_config(tiny_vocab):
    return EncoderConfig(
        hidden=16, layers=2, heads=2, ffn=32, max_len=16,
        vocab_size=len(tiny_vocab), dropout=0.1,
    )


@pytest.fixture
def tiny_encoder(tiny_config):
    return TransformerEncoder(tiny_config, seed=0)


def make_encoder(vocab, hidden=16, layers=1, heads=2, ffn=32, max_len=16, dropout=0.1, seed=0):
    cfg = EncoderConfig(hidden=hidden, layers=layers, heads=heads, ffn=ffn,
                        max_len=max_len, vocab_size=len(vocab), dropout=dropout)
    return TransformerEncoder(cfg, seed=seed)
