"""Margin ranking fine-tuning: pull paired binary/source embeddings
together, push random foreign sources away.

Per triplet the loss is max(0, margin - cos(anchor, positive)
+ cos(anchor, negative)) with cosine over pooled embeddings; the batch
loss is the mean. The hinge is inactive (zero gradient) once the margin
is satisfied.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bpe import TokenSequence, build_model_input
from .encoder import (
    EncoderModel,
    backward_batch,
    encode_batch,
    init_grads,
    pool,
    pool_backward,
)
from .errors import EmptyBatch, InsufficientGroups
from .optim import Adam

DEFAULT_MARGIN = 0.06


@dataclass
class PairedCorpus:
    """Ground-truth (binary, source) pairs over an id-encoded doc table."""

    pairs: list[tuple[str, str, str]]  # (binary_id, source_id, group_id)
    docs: dict[str, list[int]]
    max_len: int = 512
    _seq_cache: dict[str, TokenSequence] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for binary_id, source_id, _ in self.pairs:
            for doc_id in (binary_id, source_id):
                if doc_id not in self.docs:
                    raise KeyError(f"pair references unknown doc {doc_id!r}")

    def sequence(self, doc_id: str) -> TokenSequence:
        seq = self._seq_cache.get(doc_id)
        if seq is None:
            seq = build_model_input(self.docs[doc_id], None, self.max_len)
            self._seq_cache[doc_id] = seq
        return seq

    def group_ids(self) -> list[str]:
        seen = []
        for _, _, group in self.pairs:
            if group not in seen:
                seen.append(group)
        return seen


@dataclass(frozen=True)
class Triplet:
    anchor: str
    positive: str
    negative: str


def sample_triplets(
    corpus: PairedCorpus,
    batch_size: int,
    rng: np.random.Generator,
) -> list[Triplet]:
    """Uniform anchors over pairs; negatives uniform over source docs of
    all other groups."""
    groups = corpus.group_ids()
    if len(groups) < 2:
        raise InsufficientGroups(f"need >= 2 groups, have {len(groups)}")
    sources_by_group: dict[str, list[str]] = {}
    for _, source_id, group in corpus.pairs:
        sources_by_group.setdefault(group, []).append(source_id)
    foreign: dict[str, list[str]] = {}
    for group in groups:
        foreign[group] = [
            s for g in groups if g != group for s in sources_by_group[g]
        ]
    triplets = []
    for _ in range(batch_size):
        binary_id, source_id, group = corpus.pairs[rng.integers(0, len(corpus.pairs))]
        candidates = foreign[group]
        negative = candidates[rng.integers(0, len(candidates))]
        triplets.append(Triplet(binary_id, source_id, negative))
    return triplets


def cosine_rows(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def _cosine_grads(a: np.ndarray, b: np.ndarray, sim: float):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    da = b / (na * nb) - sim * a / (na * na)
    db = a / (na * nb) - sim * b / (nb * nb)
    return da, db


def _embed_unique(model, corpus, triplets, rng, pooling):
    doc_ids: list[str] = []
    index: dict[str, int] = {}
    for t in triplets:
        for doc_id in (t.anchor, t.positive, t.negative):
            if doc_id not in index:
                index[doc_id] = len(doc_ids)
                doc_ids.append(doc_id)
    seqs = [corpus.sequence(d) for d in doc_ids]
    ids = np.array([s.ids for s in seqs])
    mask = np.array([s.attention_mask for s in seqs])
    # pad tail columns beyond the longest sequence are inert; drop them
    n = int(mask.sum(axis=1).max())
    ids, mask = ids[:, :n], mask[:, :n]
    hidden, cache = encode_batch(model, ids, mask, train_mode=rng is not None, rng=rng)
    embeds = np.stack([pool(hidden[i], mask[i], pooling) for i in range(len(doc_ids))])
    return index, mask, hidden, cache, embeds


def triplet_loss(
    model: EncoderModel,
    corpus: PairedCorpus,
    triplets: Sequence[Triplet],
    margin: float = DEFAULT_MARGIN,
    pooling: str = "cls",
) -> float:
    loss, _, _ = _triplet_forward(model, corpus, triplets, margin, None, pooling, False)
    return loss


def triplet_loss_and_grads(
    model: EncoderModel,
    batch,
    margin: float = DEFAULT_MARGIN,
    rng: Optional[np.random.Generator] = None,
    pooling: str = "cls",
):
    corpus, triplets = batch
    loss, grads, _ = _triplet_forward(model, corpus, triplets, margin, rng, pooling, True)
    return loss, grads


def _triplet_forward(model, corpus, triplets, margin, rng, pooling, want_grads):
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if not triplets:
        raise EmptyBatch("no triplets in batch")
    index, mask, hidden, cache, embeds = _embed_unique(model, corpus, triplets, rng, pooling)

    n = len(triplets)
    losses = np.zeros(n)
    sims = np.zeros((n, 2))
    dembeds = np.zeros_like(embeds)
    for t_idx, t in enumerate(triplets):
        ia, ip, ineg = index[t.anchor], index[t.positive], index[t.negative]
        sim_pos = cosine_rows(embeds[ia], embeds[ip])
        sim_neg = cosine_rows(embeds[ia], embeds[ineg])
        sims[t_idx] = (sim_pos, sim_neg)
        hinge = margin - sim_pos + sim_neg
        if hinge > 0:
            losses[t_idx] = hinge
            if want_grads:
                da_p, dp = _cosine_grads(embeds[ia], embeds[ip], sim_pos)
                da_n, dn = _cosine_grads(embeds[ia], embeds[ineg], sim_neg)
                dembeds[ia] += (-da_p + da_n) / n
                dembeds[ip] += -dp / n
                dembeds[ineg] += dn / n
    loss = float(losses.mean())
    if not want_grads:
        return loss, None, sims

    grads = init_grads(model)
    dhidden = np.zeros_like(hidden)
    for row in range(embeds.shape[0]):
        dhidden[row] = pool_backward(dembeds[row], hidden.shape[1], mask[row], pooling)
    backward_batch(model, cache, dhidden, grads)
    return loss, grads, sims


@dataclass
class FinetuneConfig:
    steps: int
    batch_size: int = 32
    lr: float = 1e-3
    margin: float = DEFAULT_MARGIN
    pooling: str = "cls"
    log_every: int = 25
    log_path: Optional[str] = None


def finetune(
    model: EncoderModel,
    corpus: PairedCorpus,
    config: FinetuneConfig,
    seed: int = 0,
) -> tuple[EncoderModel, list[tuple[int, float, float, float]]]:
    """Train in place; returns the model and (step, loss, mean sim+,
    mean sim-) history rows. Deterministic under the seed."""
    rng = np.random.default_rng(seed)
    optimizer = Adam(model.params, lr=config.lr)
    history: list[tuple[int, float, float, float]] = []

    log_fh = None
    writer = None
    if config.log_path:
        log_fh = open(config.log_path, "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(["step", "loss", "sim_pos", "sim_neg"])
    try:
        for step in range(1, config.steps + 1):
            triplets = sample_triplets(corpus, config.batch_size, rng)
            loss, grads, sims = _triplet_forward(
                model, corpus, triplets, config.margin, rng, config.pooling, True
            )
            optimizer.step(model.params, grads)
            row = (step, loss, float(sims[:, 0].mean()), float(sims[:, 1].mean()))
            history.append(row)
            if writer and (step % config.log_every == 0 or step == config.steps):
                writer.writerow([step, f"{loss:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}"])
    finally:
        if log_fh:
            log_fh.close()
    return model, history
