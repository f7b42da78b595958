"""Byte pair encoding over IR token streams, plus model-input assembly.

Merging is within-word at character level. The instruction/function
sentinels (<i>, <f>) and the six special tokens are atomic units that
never split and never merge with neighbours. Specials hold the reserved
ids 0-5; base symbols and learned merges follow.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import EmptyCorpus, UnknownId, VocabTooSmall
from .ir.normalize import SENT_FUNC, SENT_INSTR

CLS, SEP, EOS, MASK, PAD, UNK = "[CLS]", "[SEP]", "[EOS]", "[MASK]", "[PAD]", "[UNK]"
SPECIALS = (CLS, SEP, EOS, MASK, PAD, UNK)
CLS_ID, SEP_ID, EOS_ID, MASK_ID, PAD_ID, UNK_ID = range(6)
NUM_SPECIALS = len(SPECIALS)

_ATOMIC = frozenset(SPECIALS) | {SENT_INSTR, SENT_FUNC}

VOCAB_MAGIC = "irmatch-bpe v1"


@dataclass
class Vocabulary:
    """Merge rules plus the token<->id table."""

    merges: list[tuple[str, str]]
    token_to_id: dict[str, int]
    id_to_token: list[str]
    _ranks: dict[tuple[str, str], int] = field(default_factory=dict, repr=False, compare=False)
    _word_cache: dict[str, list[int]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self._ranks:
            self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}

    def __len__(self) -> int:
        return len(self.id_to_token)


def _split_word(word: str) -> list[str]:
    if word in _ATOMIC:
        return [word]
    return list(word)


def _count_pairs(words: dict[str, tuple[list[str], int]]) -> Counter:
    counts: Counter = Counter()
    for units, freq in words.values():
        for left, right in zip(units, units[1:]):
            counts[(left, right)] += freq
    return counts


def _merge_units(units: list[str], pair: tuple[str, str], joined: str) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(units):
        if i + 1 < len(units) and units[i] == pair[0] and units[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(units[i])
            i += 1
    return out


def train_bpe(
    corpus: Iterable[Sequence[str]],
    vocab_size: int = 8192,
    min_freq: int = 2,
) -> Vocabulary:
    """Learn merges by greedy highest-frequency pair merging.

    Stops at vocab_size or when no pair reaches min_freq. Ties break
    lexicographically on (left, right), so retraining on the same corpus
    reproduces the same merge list.
    """
    word_freq: Counter = Counter()
    for stream in corpus:
        word_freq.update(stream)
    if not word_freq:
        raise EmptyCorpus("BPE training corpus is empty")

    base: set[str] = {SENT_INSTR, SENT_FUNC}
    for word in word_freq:
        for unit in _split_word(word):
            base.add(unit)
    base -= set(SPECIALS)

    floor = NUM_SPECIALS + len(base)
    if vocab_size < floor:
        raise VocabTooSmall(
            f"vocab_size {vocab_size} cannot hold {NUM_SPECIALS} specials + {len(base)} base symbols"
        )

    id_to_token = list(SPECIALS) + sorted(base)
    token_to_id = {tok: idx for idx, tok in enumerate(id_to_token)}

    words = {w: (_split_word(w), f) for w, f in word_freq.items()}
    merges: list[tuple[str, str]] = []
    while len(id_to_token) < vocab_size:
        counts = _count_pairs(words)
        best_pair = None
        best_freq = 0
        for pair, freq in counts.items():
            if pair[0] + pair[1] in SPECIALS:
                continue
            if freq > best_freq or (freq == best_freq and best_pair is not None and pair < best_pair):
                best_pair, best_freq = pair, freq
        if best_pair is None or best_freq < min_freq:
            break
        joined = best_pair[0] + best_pair[1]
        merges.append(best_pair)
        if joined not in token_to_id:
            token_to_id[joined] = len(id_to_token)
            id_to_token.append(joined)
        for word, (units, freq) in words.items():
            if len(units) > 1:
                words[word] = (_merge_units(units, best_pair, joined), freq)

    return Vocabulary(merges=merges, token_to_id=token_to_id, id_to_token=id_to_token)


def _encode_word(vocab: Vocabulary, word: str) -> list[int]:
    cached = vocab._word_cache.get(word)
    if cached is not None:
        return cached
    units = _split_word(word)
    ranks = vocab._ranks
    while len(units) > 1:
        best_rank = None
        best_idx = -1
        for idx in range(len(units) - 1):
            rank = ranks.get((units[idx], units[idx + 1]))
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank, best_idx = rank, idx
        if best_rank is None:
            break
        pair = (units[best_idx], units[best_idx + 1])
        units = _merge_units(units, pair, pair[0] + pair[1])
    ids = [vocab.token_to_id.get(unit, UNK_ID) for unit in units]
    vocab._word_cache[word] = ids
    return ids


def encode(vocab: Vocabulary, tokens: Sequence[str]) -> list[int]:
    """Apply merges per word; residual units outside the vocabulary map
    to [UNK]."""
    ids: list[int] = []
    for word in tokens:
        ids.extend(_encode_word(vocab, word))
    return ids


def decode(vocab: Vocabulary, ids: Sequence[int]) -> list[str]:
    """Inverse of encode at the unit level (lossy across [UNK])."""
    out = []
    for idx in ids:
        if not 0 <= idx < len(vocab.id_to_token):
            raise UnknownId(f"id {idx} outside vocabulary of size {len(vocab.id_to_token)}")
        out.append(vocab.id_to_token[idx])
    return out


@dataclass
class TokenSequence:
    """Padded model input: ids, length, and the non-pad mask."""

    ids: list[int]
    length: int
    attention_mask: list[int]


def build_model_input(
    seq_a: Sequence[int],
    seq_b: Optional[Sequence[int]] = None,
    max_len: int = 512,
) -> TokenSequence:
    """Assemble [CLS] a ([SEP] b) [EOS] + right padding.

    When over budget, tokens are dropped one at a time from whichever
    segment is currently longer (from b on ties), so a 10/10 split into
    a 9-token budget keeps 5 of a and 4 of b.
    """
    if max_len < 4:
        raise ValueError(f"max_len must be >= 4, got {max_len}")
    a = list(seq_a)
    b = list(seq_b) if seq_b is not None else None
    overhead = 3 if b is not None else 2
    budget = max_len - overhead
    if b is None:
        a = a[:budget]
        content = [CLS_ID, *a, EOS_ID]
    else:
        while len(a) + len(b) > budget:
            if len(a) > len(b):
                a.pop()
            else:
                b.pop()
        content = [CLS_ID, *a, SEP_ID, *b, EOS_ID]
    n_pad = max_len - len(content)
    ids = content + [PAD_ID] * n_pad
    mask = [1] * len(content) + [0] * n_pad
    return TokenSequence(ids=ids, length=len(ids), attention_mask=mask)


def save_vocab(path: str | Path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(VOCAB_MAGIC + "\n")
        for left, right in vocab.merges:
            fh.write(f"{left}\t{right}\n")
        fh.write("#tokens\n")
        for idx, tok in enumerate(vocab.id_to_token):
            fh.write(f"{tok}\t{idx}\n")


def load_vocab(path: str | Path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != VOCAB_MAGIC:
            raise ValueError(f"{path}: bad vocabulary header {header!r}")
        merges: list[tuple[str, str]] = []
        in_tokens = False
        token_to_id: dict[str, int] = {}
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line == "#tokens":
                in_tokens = True
                continue
            left, _, right = line.partition("\t")
            if in_tokens:
                token_to_id[left] = int(right)
            else:
                merges.append((left, right))
    id_to_token = [""] * len(token_to_id)
    for tok, idx in token_to_id.items():
        id_to_token[idx] = tok
    return Vocabulary(merges=merges, token_to_id=token_to_id, id_to_token=id_to_token)
