"""Numeric contracts of attention, encode, and pooling."""

import numpy as np
import pytest

from irmatch.bpe import CLS_ID, EOS_ID, PAD_ID, TokenSequence, build_model_input
from irmatch.encoder import (
    EncoderModel,
    ModelConfig,
    attention,
    encode,
    encode_batch,
    init_model,
    pool,
    softmax,
)
from irmatch.errors import EmptySequence, IdOutOfRange, LengthExceeded, ShapeMismatch

TINY = ModelConfig(vocab_size=32, d_model=8, n_heads=2, n_layers=2,
                   ffn_dim=16, max_len=24, dropout=0.0)


def _seq(ids, max_len=12):
    return build_model_input(list(ids), None, max_len)


class TestAttention:
    def test_single_key_returns_value_row(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(1, 4))
        k = rng.normal(size=(1, 4))
        v = rng.normal(size=(1, 4))
        out = attention(q, k, v, d_model=4)
        assert np.array_equal(out, v)

    def test_orthogonal_queries_give_mean_of_values(self):
        # q orthogonal to every key and keys of equal norm -> equal logits
        q = np.array([[0.0, 0.0, 1.0]])
        k = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
        v = np.array([[3.0, 0.0], [0.0, 6.0], [9.0, 3.0]])
        out = attention(q, k, v, d_model=3)
        np.testing.assert_allclose(out[0], v.mean(axis=0), atol=1e-12)

    def test_two_by_two_fixture_matches_hand_softmax(self):
        q = np.array([[1.0, 0.0], [0.0, 2.0]])
        k = np.array([[1.0, 1.0], [2.0, 0.0]])
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        d_model = 2
        out = attention(q, k, v, d_model=d_model)
        # brute-force arithmetic, spelled out
        logits = np.array([
            [(1 * 1 + 0 * 1), (1 * 2 + 0 * 0)],
            [(0 * 1 + 2 * 1), (0 * 2 + 2 * 0)],
        ]) / np.sqrt(d_model)
        expected = np.zeros((2, 2))
        for i in range(2):
            e = np.exp(logits[i] - logits[i].max())
            w = e / e.sum()
            expected[i] = w[0] * v[0] + w[1] * v[1]
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_rows_sum_to_one_and_convex_combination(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n_q, n_k, d = rng.integers(1, 6), rng.integers(1, 6), 4
            q, k = rng.normal(size=(n_q, d)), rng.normal(size=(n_k, d))
            probs = softmax((q @ k.T) / np.sqrt(d))
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
            v = rng.normal(size=(n_k, 3))
            out = attention(q, k, v, d_model=d)
            lo, hi = v.min(axis=0), v.max(axis=0)
            assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)

    def test_masked_keys_get_zero_weight(self):
        q = np.ones((2, 3))
        k = np.ones((3, 3))
        v = np.array([[1.0], [2.0], [100.0]])
        out = attention(q, k, v, d_model=3, key_mask=[1, 1, 0])
        np.testing.assert_allclose(out, 1.5, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 4)))
        with pytest.raises(ShapeMismatch):
            attention(np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 3)))
        with pytest.raises(ShapeMismatch):
            attention(np.ones(3), np.ones((2, 3)), np.ones((2, 3)))


class TestEncode:
    def test_output_shape(self):
        model = init_model(TINY, seed=0)
        seq = _seq([7, 8, 9])
        hidden = encode(model, seq)
        assert hidden.shape == (12, TINY.d_model)

    def test_eval_mode_deterministic(self):
        model = init_model(TINY, seed=0)
        seq = _seq([7, 8, 9, 10])
        first = encode(model, seq)
        second = encode(model, seq)
        assert np.array_equal(first, second)

    def test_pad_content_does_not_leak(self):
        model = init_model(TINY, seed=1)
        seq = _seq([7, 8, 9])
        n = sum(seq.attention_mask)
        base = encode(model, seq)
        # overwrite the pad tail with arbitrary ids
        tampered = TokenSequence(
            ids=seq.ids[:n] + [13] * (len(seq.ids) - n),
            length=seq.length,
            attention_mask=seq.attention_mask,
        )
        other = encode(model, tampered)
        assert np.array_equal(base[:n], other[:n])

    def test_id_out_of_range(self):
        model = init_model(TINY, seed=0)
        seq = _seq([7])
        seq.ids[1] = TINY.vocab_size
        with pytest.raises(IdOutOfRange):
            encode(model, seq)

    def test_length_exceeded(self):
        model = init_model(TINY, seed=0)
        seq = build_model_input(list(range(6, 26)), None, max_len=TINY.max_len + 8)
        with pytest.raises(LengthExceeded):
            encode(model, seq)

    def test_no_nan_after_standard_init(self):
        rng = np.random.default_rng(3)
        model = init_model(TINY, seed=2)
        for _ in range(10):
            ids = list(rng.integers(6, TINY.vocab_size, size=rng.integers(1, 16)))
            hidden = encode(model, _seq(ids, max_len=20))
            assert np.all(np.isfinite(hidden))

    def test_dropout_needs_rng(self):
        config = ModelConfig(vocab_size=32, d_model=8, n_heads=2, n_layers=1,
                             ffn_dim=16, max_len=12, dropout=0.4)
        model = init_model(config, seed=0)
        with pytest.raises(ValueError):
            encode(model, _seq([7, 8]), train_mode=True)

    def test_train_mode_reproducible_from_seed(self):
        config = ModelConfig(vocab_size=32, d_model=8, n_heads=2, n_layers=1,
                             ffn_dim=16, max_len=12, dropout=0.4)
        model = init_model(config, seed=0)
        seq = _seq([7, 8, 9])
        one = encode(model, seq, train_mode=True, rng=np.random.default_rng(5))
        two = encode(model, seq, train_mode=True, rng=np.random.default_rng(5))
        assert np.array_equal(one, two)

    def test_batch_order_independence(self):
        model = init_model(TINY, seed=4)
        seq_a, seq_b = _seq([7, 8]), _seq([9, 10, 11])
        ids = np.array([seq_a.ids, seq_b.ids])
        mask = np.array([seq_a.attention_mask, seq_b.attention_mask])
        fwd, _ = encode_batch(model, ids, mask)
        rev, _ = encode_batch(model, ids[::-1].copy(), mask[::-1].copy())
        assert np.array_equal(fwd[0], rev[1])
        assert np.array_equal(fwd[1], rev[0])


class TestPool:
    def test_single_row_both_strategies(self):
        row = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(pool(row, [1], "cls"), row[0])
        np.testing.assert_array_equal(pool(row, [1], "mean"), row[0])

    def test_mean_of_identical_rows(self):
        rows = np.array([[2.0, 4.0], [2.0, 4.0]])
        np.testing.assert_array_equal(pool(rows, [1, 1], "mean"), rows[0])

    def test_mean_fixture(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(pool(rows, [1, 1], "mean"), [0.5, 0.5])

    def test_mean_ignores_padded_rows(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0], [99.0, 99.0]])
        np.testing.assert_allclose(pool(rows, [1, 1, 0], "mean"), [0.5, 0.5])

    def test_empty_errors(self):
        with pytest.raises(EmptySequence):
            pool(np.zeros((0, 4)), [], "cls")
        with pytest.raises(EmptySequence):
            pool(np.ones((2, 2)), [0, 0], "mean")
        with pytest.raises(ValueError):
            pool(np.ones((2, 2)), [1, 1], "median")
