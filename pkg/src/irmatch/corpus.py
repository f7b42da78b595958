"""File formats shared across CLI stages.

corpus.jsonl: one record per document,
    {"doc_id": str, "origin": str, "language_tag": str|null, "tokens": [str]}
pairs.jsonl: one record per ground-truth pair,
    {"binary_id": str, "source_id": str, "group_id": str}
Policy and model-config files are flat `key = value` text (booleans
true/false, ints, floats, bare or quoted strings, comma lists).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional


@dataclass
class CorpusRecord:
    doc_id: str
    origin: str
    tokens: list[str]
    language_tag: Optional[str] = None


@dataclass
class PairRecord:
    binary_id: str
    source_id: str
    group_id: str


def write_corpus(path: str | Path, records: Iterable[CorpusRecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "doc_id": rec.doc_id,
                "origin": rec.origin,
                "language_tag": rec.language_tag,
                "tokens": rec.tokens,
            }, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_corpus(path: str | Path) -> Iterator[CorpusRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            yield CorpusRecord(
                doc_id=obj["doc_id"],
                origin=obj["origin"],
                language_tag=obj.get("language_tag"),
                tokens=list(obj["tokens"]),
            )


def load_corpus_dict(path: str | Path) -> dict[str, CorpusRecord]:
    out: dict[str, CorpusRecord] = {}
    for rec in read_corpus(path):
        if rec.doc_id in out:
            raise ValueError(f"duplicate doc_id {rec.doc_id!r} in {path}")
        out[rec.doc_id] = rec
    return out


def write_pairs(path: str | Path, pairs: Iterable[PairRecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps({
                "binary_id": pair.binary_id,
                "source_id": pair.source_id,
                "group_id": pair.group_id,
            }) + "\n")
            count += 1
    return count


def read_pairs(path: str | Path) -> list[PairRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(PairRecord(
                binary_id=obj["binary_id"],
                source_id=obj["source_id"],
                group_id=str(obj["group_id"]),
            ))
    return out


def record_from_ir_text(
    text: str,
    doc_id: str,
    origin: str,
    policy,
    language_tag: Optional[str] = None,
    extra_opcodes: tuple[str, ...] = (),
) -> CorpusRecord:
    """parse -> normalize -> token stream for one .ll text."""
    from .ir import normalize, parse_ir_text, to_token_stream

    doc = parse_ir_text(text, doc_id=doc_id, origin=origin,
                        language_tag=language_tag, extra_opcodes=extra_opcodes)
    stream = to_token_stream(normalize(doc, policy))
    return CorpusRecord(doc_id=doc_id, origin=origin,
                        language_tag=language_tag, tokens=stream)


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if "," in raw:
        return tuple(part.strip().strip('"') for part in raw.split(",") if part.strip())
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def read_keyvalue_file(path: str | Path) -> dict:
    """Parse a flat key = value config file. Lines starting with # are
    comments; unknown keys are the caller's problem."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key = value, got {line!r}")
            key, _, raw = line.partition("=")
            out[key.strip()] = _parse_value(raw)
    return out
