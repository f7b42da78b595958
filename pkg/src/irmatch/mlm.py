"""Masked-language-model objective and the pre-training loop.

Selection picks max(1, round(0.15 * maskable)) positions uniformly
without replacement; each selected position is replaced by [MASK] with
probability 0.8, kept with 0.1, or swapped for a random non-special id
with 0.1. Specials and pads are never selected. The output projection is
tied to the token embedding matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bpe import MASK_ID, NUM_SPECIALS, TokenSequence, build_model_input
from .checkpoint import save_checkpoint
from .encoder import (
    EncoderModel,
    ModelConfig,
    backward_batch,
    encode_batch,
    init_grads,
    init_model,
)
from .errors import EmptyCorpus, NoMaskedPositions, NothingToMask
from .optim import Adam

IGNORE = -100
MASK_RATE = 0.15


@dataclass
class MaskedExample:
    ids: np.ndarray
    attention_mask: np.ndarray
    labels: np.ndarray
    positions: np.ndarray


@dataclass
class MaskedBatch:
    ids: np.ndarray
    attention_mask: np.ndarray
    labels: np.ndarray
    mask_positions: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def from_examples(cls, examples: Sequence[MaskedExample]) -> "MaskedBatch":
        return cls(
            ids=np.stack([e.ids for e in examples]),
            attention_mask=np.stack([e.attention_mask for e in examples]),
            labels=np.stack([e.labels for e in examples]),
            mask_positions=[e.positions for e in examples],
        )

    def trimmed(self) -> "MaskedBatch":
        """Drop all-pad tail columns. Pad keys carry exactly zero attention
        weight, so outputs and gradients are unchanged."""
        n = int(self.attention_mask.sum(axis=1).max())
        return MaskedBatch(
            ids=self.ids[:, :n],
            attention_mask=self.attention_mask[:, :n],
            labels=self.labels[:, :n],
            mask_positions=self.mask_positions,
        )


def _maskable_positions(ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.flatnonzero((mask != 0) & (ids >= NUM_SPECIALS))


def _apply_replacements(ids, positions, rng, vocab_size):
    """80/10/10 rule per selected position; returns replacement draws so
    instruction-level masking can reuse one draw per span."""
    for pos in positions:
        u = rng.random()
        if u < 0.8:
            ids[pos] = MASK_ID
        elif u < 0.9:
            pass
        else:
            ids[pos] = rng.integers(NUM_SPECIALS, vocab_size)


def mask_tokens(
    seq: TokenSequence,
    rng: np.random.Generator,
    vocab_size: int,
    unit: str = "token",
    boundary_id: Optional[int] = None,
) -> MaskedExample:
    """Mask one sequence. unit="instruction" groups positions between
    boundary_id sentinels and masks whole spans."""
    ids = np.asarray(seq.ids, dtype=np.int64).copy()
    mask = np.asarray(seq.attention_mask, dtype=np.int64)
    maskable = _maskable_positions(ids, mask)
    labels = np.full(ids.shape, IGNORE, dtype=np.int64)

    if unit == "token":
        if maskable.size == 0:
            raise NothingToMask("sequence has no maskable positions")
        n_select = max(1, round(MASK_RATE * maskable.size))
        chosen = np.sort(rng.choice(maskable, size=n_select, replace=False))
        labels[chosen] = ids[chosen]
        _apply_replacements(ids, chosen, rng, vocab_size)
        return MaskedExample(ids, mask, labels, chosen)

    if unit != "instruction":
        raise ValueError(f"unknown masking unit {unit!r}")
    if boundary_id is None:
        raise ValueError("instruction-level masking needs the <i> sentinel id")
    spans: list[list[int]] = [[]]
    for pos in maskable:
        if ids[pos] == boundary_id:
            spans.append([])
        else:
            spans[-1].append(int(pos))
    spans = [s for s in spans if s]
    if not spans:
        raise NothingToMask("sequence has no maskable instructions")
    n_select = max(1, round(MASK_RATE * len(spans)))
    picked = rng.choice(len(spans), size=n_select, replace=False)
    chosen_all: list[int] = []
    for span_idx in np.sort(picked):
        span = spans[span_idx]
        labels[span] = ids[span]
        chosen_all.extend(span)
        u = rng.random()
        if u < 0.8:
            ids[span] = MASK_ID
        elif u < 0.9:
            pass
        else:
            for pos in span:
                ids[pos] = rng.integers(NUM_SPECIALS, vocab_size)
    chosen = np.array(sorted(chosen_all), dtype=np.int64)
    return MaskedExample(ids, mask, labels, chosen)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def mlm_loss(
    model: EncoderModel,
    batch: MaskedBatch,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Mean cross-entropy over labeled positions (forward only)."""
    loss, _ = _mlm_forward(model, batch, rng, want_grads=False)
    return loss


def mlm_loss_and_grads(
    model: EncoderModel,
    batch: MaskedBatch,
    rng: Optional[np.random.Generator] = None,
):
    return _mlm_forward(model, batch, rng, want_grads=True)


def _mlm_forward(model, batch, rng, want_grads):
    train = rng is not None
    hidden, cache = encode_batch(model, batch.ids, batch.attention_mask,
                                 train_mode=train, rng=rng)
    sel = batch.labels != IGNORE
    n_sel = int(sel.sum())
    if n_sel == 0:
        raise NoMaskedPositions("batch has no labeled positions")
    h_sel = hidden[sel]
    targets = batch.labels[sel]
    logits = h_sel @ model.params["tok_emb"].T + model.params["mlm_bias"]
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n_sel), targets].mean())
    if not want_grads:
        return loss, None

    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(n_sel), targets] -= 1.0
    dlogits /= n_sel

    grads = init_grads(model)
    grads["mlm_bias"] += dlogits.sum(axis=0)
    grads["tok_emb"] += dlogits.T @ h_sel
    dhidden = np.zeros_like(hidden)
    dhidden[sel] = dlogits @ model.params["tok_emb"]
    backward_batch(model, cache, dhidden, grads)
    return loss, grads


@dataclass
class PretrainConfig:
    steps: int
    batch_size: int = 32
    lr: float = 1e-3
    mask_unit: str = "token"
    boundary_id: Optional[int] = None
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None


def pretrain(
    corpus: Sequence[Sequence[int]],
    model_config: ModelConfig,
    train_config: PretrainConfig,
    seed: int = 0,
) -> tuple[EncoderModel, list[tuple[int, float]]]:
    """Adam MLM training over encoded id streams; returns the model and
    the per-step loss history. Fully determined by the seed."""
    streams = [list(s) for s in corpus if len(s) > 0]
    if not streams:
        raise EmptyCorpus("pretraining corpus is empty")
    model = init_model(model_config, seed)
    rng = np.random.default_rng(seed + 1)
    optimizer = Adam(model.params, lr=train_config.lr)
    history: list[tuple[int, float]] = []

    log_fh = None
    writer = None
    if train_config.log_path:
        log_fh = open(train_config.log_path, "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(["step", "loss", "lr"])
    try:
        for step in range(1, train_config.steps + 1):
            picks = rng.integers(0, len(streams), size=train_config.batch_size)
            examples = []
            for idx in picks:
                seq = build_model_input(streams[idx], None, model_config.max_len)
                examples.append(mask_tokens(
                    seq, rng, model_config.vocab_size,
                    unit=train_config.mask_unit,
                    boundary_id=train_config.boundary_id,
                ))
            batch = MaskedBatch.from_examples(examples).trimmed()
            loss, grads = mlm_loss_and_grads(model, batch, rng=rng)
            optimizer.step(model.params, grads)
            history.append((step, loss))
            if writer:
                writer.writerow([step, f"{loss:.6f}", train_config.lr])
            if (train_config.checkpoint_every > 0 and train_config.checkpoint_path
                    and step % train_config.checkpoint_every == 0
                    and step < train_config.steps):
                save_checkpoint(Path(f"{train_config.checkpoint_path}.step{step}"), model)
    finally:
        if log_fh:
            log_fh.close()
    return model, history
