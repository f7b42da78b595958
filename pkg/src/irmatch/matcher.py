"""Embedding, scoring, and brute-force retrieval over a source index.

Index file layout (`irmatch-idx v1`):

    line 1: b"irmatch-idx v1\\n"
    line 2: JSON {"fingerprint": str, "dim": int, "count": int} + b"\\n"
    per entry:
        JSON line {"doc_id": ..., "origin": ..., "language_tag": ...}
        dim * float32 LE vector bytes
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bpe import Vocabulary, build_model_input, encode as bpe_encode
from .encoder import EncoderModel, encode as model_encode, pool
from .errors import DimensionMismatch, EmptyIndex, FingerprintMismatch, ZeroVector

INDEX_MAGIC = b"irmatch-idx v1\n"
DEFAULT_THRESHOLD = 0.8


@dataclass
class IndexEntry:
    doc_id: str
    vector: np.ndarray
    origin: str = "source"
    language_tag: Optional[str] = None


@dataclass
class EmbeddingIndex:
    model_fingerprint: str
    dim: int
    entries: list[IndexEntry] = field(default_factory=list)

    def add(self, entry: IndexEntry) -> None:
        if entry.vector.shape != (self.dim,):
            raise DimensionMismatch(
                f"entry dim {entry.vector.shape} != index dim ({self.dim},)"
            )
        self.entries.append(entry)

    def vectors(self) -> np.ndarray:
        return np.stack([e.vector for e in self.entries])


def embed_document(
    model: EncoderModel,
    tokens: Sequence[str],
    vocab: Vocabulary,
    pooling: str = "cls",
) -> np.ndarray:
    """Deterministic eval-mode embedding of one token stream."""
    ids = bpe_encode(vocab, tokens)
    seq = build_model_input(ids, None, model.config.max_len)
    hidden = model_encode(model, seq, train_mode=False)
    return pool(hidden, seq.attention_mask, pooling)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine in [-1, 1]; exactly 1.0 for identical inputs so boundary
    thresholds behave."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine of an all-zero vector is undefined")
    if np.array_equal(a, b):
        return 1.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def match_pair(a: np.ndarray, b: np.ndarray, threshold: float = DEFAULT_THRESHOLD):
    """Score one pair; matched when score >= threshold (inclusive)."""
    if not -1.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [-1, 1], got {threshold}")
    score = cosine(a, b)
    return score, score >= threshold


def search(
    query: np.ndarray,
    index: EmbeddingIndex,
    k: int,
    query_fingerprint: Optional[str] = None,
) -> list[tuple[str, float]]:
    """Exact top-k by cosine, descending; ties break on doc_id ascending."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not index.entries:
        raise EmptyIndex("search over an empty index")
    if query_fingerprint is not None and query_fingerprint != index.model_fingerprint:
        raise FingerprintMismatch(
            f"query model {query_fingerprint[:12]} != index model "
            f"{index.model_fingerprint[:12]}"
        )
    scored = [(entry.doc_id, cosine(query, entry.vector)) for entry in index.entries]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def save_index(path: str | Path, index: EmbeddingIndex) -> None:
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        header = {
            "fingerprint": index.model_fingerprint,
            "dim": index.dim,
            "count": len(index.entries),
        }
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for entry in index.entries:
            meta = {
                "doc_id": entry.doc_id,
                "origin": entry.origin,
                "language_tag": entry.language_tag,
            }
            fh.write(json.dumps(meta, ensure_ascii=False).encode("utf-8") + b"\n")
            fh.write(np.asarray(entry.vector, dtype="<f4").tobytes())


def load_index(path: str | Path) -> EmbeddingIndex:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != INDEX_MAGIC:
            raise ValueError(f"{path}: not an irmatch index (header {magic!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        index = EmbeddingIndex(model_fingerprint=header["fingerprint"], dim=header["dim"])
        for _ in range(header["count"]):
            meta = json.loads(fh.readline().decode("utf-8"))
            raw = fh.read(4 * header["dim"])
            vector = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            index.add(IndexEntry(
                doc_id=meta["doc_id"],
                vector=vector,
                origin=meta.get("origin", "source"),
                language_tag=meta.get("language_tag"),
            ))
    return index
