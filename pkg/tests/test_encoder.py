import numpy as np
import pytest

from tata import autograd as ag
from tata.autograd import Tensor
from tata.encoder import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    EncoderConfig,
    TransformerEncoder,
    Vocabulary,
    format_pair,
    pad_batch,
    split_text,
    tokenize,
)


class TestVocabulary:
    def test_specials_pinned_at_low_ids(self, tiny_vocab):
        assert tiny_vocab.id_to_token[:4] == ["[CLS]", "[SEP]", "[PAD]", "[UNK]"]
        assert (CLS_ID, SEP_ID, PAD_ID, UNK_ID) == (0, 1, 2, 3)

    def test_ids_dense(self, tiny_vocab):
        ids = sorted(tiny_vocab.token_to_id.values())
        assert ids == list(range(len(tiny_vocab)))

    def test_round_trip_file(self, tiny_vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        tiny_vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.id_to_token == tiny_vocab.id_to_token

    def test_load_rejects_missing_specials(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("apple\nbanana\n", encoding="utf-8")
        with pytest.raises(ValueError):
            Vocabulary.load(path)

    def test_build_is_deterministic(self):
        texts = ["b a a", "c b a"]
        v1 = Vocabulary.build(texts)
        v2 = Vocabulary.build(texts)
        assert v1.id_to_token == v2.id_to_token
        # frequency-major: 'a' (3) before 'b' (2) before 'c' (1)
        assert v1.id_to_token[4:] == ["a", "b", "c"]


class TestTokenize:
    def test_empty_text(self, tiny_vocab):
        assert tokenize("", tiny_vocab) == []

    def test_lowercase_and_punctuation_split(self, tiny_vocab):
        ids = tokenize("Abraham Lincoln!", tiny_vocab)
        expected = [tiny_vocab.lookup("abraham"), tiny_vocab.lookup("lincoln"), tiny_vocab.lookup("!")]
        assert ids == expected
        assert UNK_ID not in ids

    def test_out_of_vocab_maps_to_unk(self, tiny_vocab):
        assert tokenize("zzzqqq", tiny_vocab) == [UNK_ID]

    def test_split_keeps_punctuation_separate(self):
        assert split_text("It's here.") == ["it", "'", "s", "here", "."]


class TestFormatPair:
    def test_empty_passage_ablation_layout(self, tiny_vocab):
        ids = format_pair("", "guns", tiny_vocab, max_len=16)
        assert ids == [CLS_ID, SEP_ID, tiny_vocab.lookup("guns"), SEP_ID]

    def test_direct_construction(self, tiny_vocab):
        ids = format_pair("a b", "c", tiny_vocab, max_len=16)
        expected = [CLS_ID, tiny_vocab.lookup("a"), tiny_vocab.lookup("b"), SEP_ID,
                    tiny_vocab.lookup("c"), SEP_ID]
        assert ids == expected

    def test_passage_truncated_first(self, tiny_vocab):
        passage = " ".join(["a"] * 100)
        ids = format_pair(passage, "b c", tiny_vocab, max_len=16)
        assert len(ids) == 16
        # 16 - 3 specials - 2 topic tokens = 11 passage tokens survive
        assert ids.count(tiny_vocab.lookup("a")) == 11
        assert ids[-1] == SEP_ID and ids[-4] == SEP_ID

    def test_oversized_topic_rejected(self, tiny_vocab):
        with pytest.raises(ValueError, match="topic"):
            format_pair("x", " ".join(["a"] * 20), tiny_vocab, max_len=16)


class TestEncode:
    def test_identical_sequences_encode_identically(self, tiny_vocab, tiny_encoder):
        seq = format_pair("abraham lincoln", "guns", tiny_vocab, 16)
        ids, mask = pad_batch([seq, seq])
        _, cls = tiny_encoder.encode(ids, mask)
        assert np.array_equal(cls.values[0], cls.values[1])

    def test_eval_mode_deterministic(self, tiny_vocab, tiny_encoder):
        seq = format_pair("many locals support", "solar farms", tiny_vocab, 16)
        ids, mask = pad_batch([seq])
        _, a = tiny_encoder.encode(ids, mask)
        _, b = tiny_encoder.encode(ids, mask)
        assert np.array_equal(a.values, b.values)

    def test_padding_never_changes_cls(self, tiny_vocab, tiny_encoder):
        seq = format_pair("many locals support", "solar farms", tiny_vocab, 16)
        ids1, mask1 = pad_batch([seq])
        _, cls1 = tiny_encoder.encode(ids1, mask1)
        padded = np.concatenate([ids1, np.full((1, 4), PAD_ID, dtype=np.int64)], axis=1)
        mask2 = np.concatenate([mask1, np.zeros((1, 4))], axis=1)
        _, cls2 = tiny_encoder.encode(padded, mask2)
        assert np.abs(cls1.values - cls2.values).max() < 1e-10

    def test_permuting_non_cls_tokens_with_zero_positions(self, tiny_vocab, tiny_config):
        encoder = TransformerEncoder(tiny_config, seed=3)
        encoder.params["pos_emb"].values[:] = 0.0
        seq = format_pair("a b c d e", "f", tiny_vocab, 16)
        ids, mask = pad_batch([seq])
        _, cls1 = tiny_encoder_out = encoder.encode(ids, mask)
        permuted = ids.copy()
        permuted[0, 1:] = permuted[0, 1:][::-1]
        _, cls2 = encoder.encode(permuted, mask)
        assert np.abs(cls1.values - cls2.values).max() < 1e-10

    def test_attention_rows_sum_to_one_over_unmasked(self, tiny_vocab, tiny_encoder):
        short = format_pair("a b", "c", tiny_vocab, 16)
        long = format_pair("a b c d e f", "g h", tiny_vocab, 16)
        ids, mask = pad_batch([short, long])
        collected = []
        tiny_encoder.encode(ids, mask, collect_attn=collected)
        assert len(collected) == tiny_encoder.config.layers
        for attn in collected:  # [B, H, T, T]
            sums = attn.sum(axis=-1)
            assert np.abs(sums - 1.0).max() < 1e-12
            # masked keys receive zero attention
            masked_cols = attn[0, :, :, len(short):]
            assert np.abs(masked_cols).max() == 0.0

    def test_out_of_range_id_rejected(self, tiny_encoder):
        bad = np.array([[0, 1, 10_000]])
        with pytest.raises(ValueError, match="vocab"):
            tiny_encoder.encode(bad)

    def test_cls_head_grad_check(self, tiny_vocab, tiny_config):
        encoder = TransformerEncoder(tiny_config, seed=1)
        seq = format_pair("abraham lincoln was here", "guns", tiny_vocab, 16)
        ids, mask = pad_batch([seq])
        rng = np.random.default_rng(0)
        readout = Tensor(rng.normal(size=(tiny_config.hidden, 1)))
        probe = encoder.params["l0.wq"]

        def f(w):
            encoder.params["l0.wq"] = w
            _, cls = encoder.encode(ids, mask)
            return ag.tensor_sum(ag.matmul(cls, readout))

        err = ag.grad_check(f, probe, coords=[range(0, probe.size, 5)])
        assert err < 1e-3

    def test_freeze_clears_grad_tracking(self, tiny_encoder):
        tiny_encoder.freeze()
        assert tiny_encoder.frozen
        for t in tiny_encoder.parameters().values():
            assert not t.requires_grad and t.grad is None


class TestEncoderConfig:
    def test_hidden_must_divide_heads(self):
        with pytest.raises(ValueError):
            EncoderConfig(hidden=10, heads=4, vocab_size=10)

    def test_max_len_bounds(self):
        with pytest.raises(ValueError):
            EncoderConfig(max_len=4, vocab_size=10)
        with pytest.raises(ValueError):
            EncoderConfig(max_len=1024, vocab_size=10)

    def test_defaults(self):
        cfg = EncoderConfig(vocab_size=100)
        assert (cfg.hidden, cfg.layers, cfg.heads, cfg.max_len) == (64, 2, 4, 64)
        assert cfg.ffn == 4 * cfg.hidden
