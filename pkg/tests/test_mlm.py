"""Masking selection rules, loss oracles, and the pre-training loop."""

import numpy as np
import pytest

from irmatch.bpe import (
    CLS_ID,
    EOS_ID,
    MASK_ID,
    NUM_SPECIALS,
    PAD_ID,
    build_model_input,
)
from irmatch.encoder import ModelConfig, init_model
from irmatch.errors import EmptyCorpus, NoMaskedPositions, NothingToMask
from irmatch.mlm import (
    IGNORE,
    MaskedBatch,
    PretrainConfig,
    mask_tokens,
    mlm_loss,
    pretrain,
)

VOCAB = 30
CFG = ModelConfig(vocab_size=VOCAB, d_model=8, n_heads=2, n_layers=1,
                  ffn_dim=16, max_len=128, dropout=0.0)


def _seq(n_content, max_len=None):
    ids = list(range(6, 6 + n_content)) if n_content <= VOCAB - 6 else \
        [6 + (i % (VOCAB - 6)) for i in range(n_content)]
    return build_model_input(ids, None, max_len or (n_content + 4))


class TestMaskSelection:
    def test_exactly_fifteen_of_one_hundred(self):
        seq = _seq(100, max_len=110)
        example = mask_tokens(seq, np.random.default_rng(0), VOCAB)
        assert len(example.positions) == 15

    def test_single_maskable_floor_guard(self):
        seq = _seq(1)
        example = mask_tokens(seq, np.random.default_rng(0), VOCAB)
        assert len(example.positions) == 1

    def test_selection_counts_across_sizes(self):
        rng = np.random.default_rng(1)
        for n in (2, 7, 10, 33, 64):
            example = mask_tokens(_seq(n, max_len=n + 4), rng, VOCAB)
            assert len(example.positions) == max(1, round(0.15 * n))

    def test_specials_and_pads_never_selected(self):
        rng = np.random.default_rng(2)
        seq = _seq(10, max_len=32)
        for _ in range(200):
            example = mask_tokens(seq, rng, VOCAB)
            for pos in example.positions:
                assert seq.ids[pos] >= NUM_SPECIALS
                assert seq.attention_mask[pos] == 1
            # replacements never target specials either
            assert example.ids[0] == CLS_ID
            assert EOS_ID in example.ids
            assert all(example.ids[p] == PAD_ID for p in range(sum(seq.attention_mask), len(seq.ids)))

    def test_nothing_to_mask(self):
        seq = build_model_input([], None, 8)
        with pytest.raises(NothingToMask):
            mask_tokens(seq, np.random.default_rng(0), VOCAB)

    def test_reproducible_from_seed(self):
        seq = _seq(40, max_len=50)
        one = mask_tokens(seq, np.random.default_rng(9), VOCAB)
        two = mask_tokens(seq, np.random.default_rng(9), VOCAB)
        assert np.array_equal(one.ids, two.ids)
        assert np.array_equal(one.positions, two.positions)
        assert np.array_equal(one.labels, two.labels)

    def test_labels_only_at_selected_positions(self):
        seq = _seq(20)
        example = mask_tokens(seq, np.random.default_rng(3), VOCAB)
        labeled = np.flatnonzero(example.labels != IGNORE)
        assert np.array_equal(labeled, example.positions)
        for pos in example.positions:
            assert example.labels[pos] == seq.ids[pos]

    def test_eighty_ten_ten_ratio(self):
        rng = np.random.default_rng(4)
        seq = _seq(40, max_len=50)
        masked = kept = randomized = 0
        total = 0
        while total < 10_000:
            example = mask_tokens(seq, rng, VOCAB)
            for pos in example.positions:
                original = seq.ids[pos]
                new = example.ids[pos]
                if new == MASK_ID:
                    masked += 1
                elif new == original:
                    kept += 1
                else:
                    randomized += 1
                total += 1
        assert abs(masked / total - 0.80) < 0.02
        assert abs(kept / total - 0.10) < 0.02
        assert abs(randomized / total - 0.10) < 0.02

    def test_random_replacements_are_non_special(self):
        rng = np.random.default_rng(5)
        seq = _seq(40, max_len=50)
        for _ in range(300):
            example = mask_tokens(seq, rng, VOCAB)
            assert np.all(example.ids[example.positions] >= NUM_SPECIALS) or \
                np.all(example.ids[example.positions][example.ids[example.positions] < NUM_SPECIALS] == MASK_ID)


class TestInstructionMasking:
    def test_whole_spans_selected(self):
        boundary = 7
        ids = [8, 9, boundary, 10, 11, boundary, 12, 13]
        seq = build_model_input(ids, None, 16)
        example = mask_tokens(seq, np.random.default_rng(0), VOCAB,
                              unit="instruction", boundary_id=boundary)
        # exactly one of three spans selected: both its positions labeled
        assert len(example.positions) == 2
        labeled = example.labels[example.positions]
        assert np.all(labeled != IGNORE)

    def test_boundary_id_required(self):
        seq = _seq(10)
        with pytest.raises(ValueError):
            mask_tokens(seq, np.random.default_rng(0), VOCAB, unit="instruction")


class TestMlmLoss:
    def test_uniform_logits_give_log_vocab(self):
        model = init_model(CFG, seed=0)
        # zero token embeddings + zero bias -> logits identically zero
        model.params["tok_emb"][:] = 0.0
        model.params["mlm_bias"][:] = 0.0
        seq = _seq(12)
        example = mask_tokens(seq, np.random.default_rng(1), VOCAB)
        batch = MaskedBatch.from_examples([example])
        loss = mlm_loss(model, batch)
        assert loss == pytest.approx(np.log(VOCAB), abs=1e-6)

    def test_loss_tends_to_zero_with_confident_logits(self):
        model = init_model(CFG, seed=0)
        seq = _seq(5)
        example = mask_tokens(seq, np.random.default_rng(2), VOCAB)
        # plant a single masked position and drive its logit by hand
        pos = example.positions[0]
        target = example.labels[pos]
        losses = []
        for scale in (1.0, 10.0, 100.0):
            model.params["tok_emb"][:] = 0.0
            model.params["mlm_bias"][:] = 0.0
            model.params["mlm_bias"][target] = scale
            batch = MaskedBatch.from_examples([example])
            example_single = MaskedBatch(
                ids=batch.ids, attention_mask=batch.attention_mask,
                labels=np.where(np.arange(batch.labels.shape[1])[None, :] == pos,
                                batch.labels, IGNORE),
            )
            losses.append(mlm_loss(model, example_single))
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-6

    def test_matches_naive_cross_entropy_oracle(self):
        from irmatch.encoder import encode_batch

        model = init_model(CFG, seed=3)
        rng = np.random.default_rng(4)
        examples = [mask_tokens(_seq(10), rng, VOCAB) for _ in range(3)]
        batch = MaskedBatch.from_examples(examples)
        loss = mlm_loss(model, batch)

        hidden, _ = encode_batch(model, batch.ids, batch.attention_mask)
        total, count = 0.0, 0
        for b in range(batch.ids.shape[0]):
            for t in range(batch.ids.shape[1]):
                if batch.labels[b, t] == IGNORE:
                    continue
                logits = hidden[b, t] @ model.params["tok_emb"].T + model.params["mlm_bias"]
                exp = np.exp(logits - logits.max())
                p = exp / exp.sum()
                total += -np.log(p[batch.labels[b, t]])
                count += 1
        assert loss == pytest.approx(total / count, abs=1e-6)

    def test_no_masked_positions(self):
        model = init_model(CFG, seed=0)
        seq = _seq(4)
        example = mask_tokens(seq, np.random.default_rng(0), VOCAB)
        batch = MaskedBatch.from_examples([example])
        batch.labels[:] = IGNORE
        with pytest.raises(NoMaskedPositions):
            mlm_loss(model, batch)


PRETRAIN_CFG = ModelConfig(vocab_size=VOCAB, d_model=32, n_heads=2, n_layers=2,
                           ffn_dim=64, max_len=32, dropout=0.0)


class TestPretrain:
    def _corpus(self, rng, n_docs=30):
        """Streams where every token is predictable from its neighbours,
        so the MLM objective has something to learn."""
        corpus = []
        for _ in range(n_docs):
            a, b = (int(t) for t in rng.integers(6, VOCAB, size=2))
            length = int(rng.integers(8, 20))
            corpus.append([a if i % 2 == 0 else b for i in range(length)])
        return corpus

    def test_zero_steps_returns_initialization(self):
        rng = np.random.default_rng(0)
        corpus = self._corpus(rng)
        model, history = pretrain(corpus, PRETRAIN_CFG, PretrainConfig(steps=0), seed=11)
        reference = init_model(PRETRAIN_CFG, seed=11)
        assert history == []
        for name in reference.param_names():
            assert np.array_equal(model.params[name], reference.params[name])

    def test_same_seed_is_bit_identical(self):
        rng = np.random.default_rng(1)
        corpus = self._corpus(rng)
        config = PretrainConfig(steps=8, batch_size=4)
        m1, h1 = pretrain(corpus, PRETRAIN_CFG, config, seed=5)
        m2, h2 = pretrain(corpus, PRETRAIN_CFG, config, seed=5)
        assert h1 == h2
        for name in m1.param_names():
            assert np.array_equal(m1.params[name], m2.params[name])

    def test_loss_decreases_on_synthetic_corpus(self):
        rng = np.random.default_rng(2)
        corpus = self._corpus(rng, n_docs=40)
        config = PretrainConfig(steps=150, batch_size=8)
        _, history = pretrain(corpus, PRETRAIN_CFG, config, seed=3)
        losses = [loss for _, loss in history]
        first = np.mean(losses[:10])
        last = np.mean(losses[-10:])
        assert last < 0.7 * first
        # window trend: most consecutive 10-step windows decrease
        windows = [np.mean(losses[i:i + 10]) for i in range(0, len(losses) - 9, 10)]
        drops = sum(b < a for a, b in zip(windows, windows[1:]))
        assert drops >= len(windows) // 2

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            pretrain([], PRETRAIN_CFG, PretrainConfig(steps=1), seed=0)
        with pytest.raises(EmptyCorpus):
            pretrain([[], []], PRETRAIN_CFG, PretrainConfig(steps=1), seed=0)

    def test_training_log_written(self, tmp_path):
        rng = np.random.default_rng(3)
        corpus = self._corpus(rng)
        log = tmp_path / "train.csv"
        pretrain(corpus, PRETRAIN_CFG, PretrainConfig(steps=3, batch_size=4, log_path=str(log)), seed=0)
        lines = log.read_text().strip().splitlines()
        assert lines[0] == "step,loss,lr"
        assert len(lines) == 4
