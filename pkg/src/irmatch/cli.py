"""Command-line pipeline: prepare / train-bpe / pretrain / train / embed /
match / score / eval / synth."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bpe import encode as bpe_encode, load_vocab, save_vocab, train_bpe
from .checkpoint import file_fingerprint, load_checkpoint, save_checkpoint
from .corpus import (
    CorpusRecord,
    PairRecord,
    load_corpus_dict,
    read_corpus,
    read_keyvalue_file,
    read_pairs,
    record_from_ir_text,
    write_corpus,
    write_pairs,
)
from .encoder import ModelConfig
from .evaluate import (
    pair_protocol_scores,
    read_scores,
    sweep_grid,
    write_report,
    write_scores,
)
from .ir import NormalizePolicy
from .matcher import (
    DEFAULT_THRESHOLD,
    EmbeddingIndex,
    IndexEntry,
    embed_document,
    load_index,
    save_index,
    search,
)
from .mlm import PretrainConfig, pretrain
from .synth import SynthSpec, generate
from .triplet import DEFAULT_MARGIN, FinetuneConfig, PairedCorpus, finetune

_POLICY_KEYS = {
    "rename_registers", "rename_globals", "strip_metadata",
    "fold_constants_to_class", "keep_opcode_types", "function_denylist",
}


def _load_policy(path: str | None) -> NormalizePolicy:
    if path is None:
        return NormalizePolicy()
    raw = read_keyvalue_file(path)
    unknown = set(raw) - _POLICY_KEYS
    if unknown:
        raise SystemExit(f"unknown policy keys: {', '.join(sorted(unknown))}")
    if "function_denylist" in raw:
        value = raw["function_denylist"]
        raw["function_denylist"] = tuple(value) if isinstance(value, tuple) else (str(value),)
    return NormalizePolicy(**raw)


def _load_model_config(path: str | None, vocab_size: int) -> ModelConfig:
    raw = read_keyvalue_file(path) if path else {}
    raw.setdefault("vocab_size", vocab_size)
    return ModelConfig(**raw)


def _infer_origin(path: Path, mode: str) -> str:
    if mode != "auto":
        return mode
    parts = {p.lower() for p in path.parts} | {path.stem.lower()}
    for hint in parts:
        if "bin" in hint or "decomp" in hint:
            return "binary"
    return "source"


def cmd_prepare(args) -> int:
    policy = _load_policy(args.policy)
    in_dir = Path(args.in_dir)
    files = sorted(in_dir.rglob("*.ll"))
    if not files:
        raise SystemExit(f"no .ll files under {in_dir}")
    records = []
    for path in files:
        doc_id = path.relative_to(in_dir).as_posix()
        origin = _infer_origin(path.relative_to(in_dir), args.origin)
        records.append(record_from_ir_text(
            path.read_text(encoding="utf-8"), doc_id, origin, policy,
            language_tag=args.language,
        ))
    count = write_corpus(args.out, records)
    print(f"prepare: {count} documents -> {args.out}")
    return 0


def cmd_train_bpe(args) -> int:
    streams = (rec.tokens for rec in read_corpus(args.corpus))
    vocab = train_bpe(streams, vocab_size=args.vocab_size, min_freq=args.min_freq)
    save_vocab(args.out, vocab)
    print(f"train-bpe: {len(vocab)} tokens, {len(vocab.merges)} merges -> {args.out}")
    return 0


def _encode_corpus(corpus_path, vocab):
    docs = load_corpus_dict(corpus_path)
    return {doc_id: bpe_encode(vocab, rec.tokens) for doc_id, rec in docs.items()}, docs


def cmd_pretrain(args) -> int:
    vocab = load_vocab(args.vocab)
    encoded, _ = _encode_corpus(args.corpus, vocab)
    model_config = _load_model_config(args.config, len(vocab))
    boundary_id = vocab.token_to_id.get("<i>") if args.mask_unit == "instruction" else None
    train_config = PretrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        mask_unit=args.mask_unit,
        boundary_id=boundary_id,
        checkpoint_every=args.checkpoint_every,
        checkpoint_path=args.out,
        log_path=args.log,
    )
    streams = [encoded[doc_id] for doc_id in sorted(encoded)]
    model, history = pretrain(streams, model_config, train_config, seed=args.seed)
    fingerprint = save_checkpoint(args.out, model)
    first = history[0][1] if history else float("nan")
    last = history[-1][1] if history else float("nan")
    print(f"pretrain: {args.steps} steps, loss {first:.4f} -> {last:.4f}, "
          f"checkpoint {fingerprint[:12]} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    vocab = load_vocab(args.vocab)
    encoded, _ = _encode_corpus(args.corpus, vocab)
    model, _ = load_checkpoint(args.init)
    pairs = read_pairs(args.pairs)
    corpus = PairedCorpus(
        pairs=[(p.binary_id, p.source_id, p.group_id) for p in pairs],
        docs=encoded,
        max_len=model.config.max_len,
    )
    config = FinetuneConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        margin=args.alpha,
        pooling=args.pooling,
        log_path=args.log,
    )
    model, history = finetune(model, corpus, config, seed=args.seed)
    fingerprint = save_checkpoint(args.out, model)
    if history:
        print(f"train: {args.steps} steps, final loss {history[-1][1]:.4f}, "
              f"sim+ {history[-1][2]:.3f} sim- {history[-1][3]:.3f}, "
              f"checkpoint {fingerprint[:12]} -> {args.out}")
    return 0


def cmd_embed(args) -> int:
    vocab = load_vocab(args.vocab)
    model, fingerprint = load_checkpoint(args.model)
    index = EmbeddingIndex(model_fingerprint=fingerprint, dim=model.config.d_model)
    for rec in read_corpus(args.corpus):
        vector = embed_document(model, rec.tokens, vocab, pooling=args.pooling)
        index.add(IndexEntry(rec.doc_id, vector, rec.origin, rec.language_tag))
    save_index(args.out, index)
    print(f"embed: {len(index.entries)} documents -> {args.out}")
    return 0


def cmd_match(args) -> int:
    vocab = load_vocab(args.vocab)
    model, fingerprint = load_checkpoint(args.model)
    policy = _load_policy(args.policy)
    index = load_index(args.index)
    text = Path(args.query).read_text(encoding="utf-8")
    rec = record_from_ir_text(text, Path(args.query).name, "binary", policy)
    query = embed_document(model, rec.tokens, vocab, pooling=args.pooling)
    hits = search(query, index, args.top_k, query_fingerprint=fingerprint)
    results = [
        {"doc_id": doc_id, "score": score, "matched": score >= args.threshold}
        for doc_id, score in hits
    ]
    report = {
        "query": args.query,
        "threshold": args.threshold,
        "model_fingerprint": fingerprint,
        "results": results,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    else:
        json.dump(report, sys.stdout, indent=2)
        print()
    return 0


def cmd_score(args) -> int:
    index = load_index(args.index)
    pairs = read_pairs(args.pairs)
    items = pair_protocol_scores(
        index,
        [(p.binary_id, p.source_id, p.group_id) for p in pairs],
        n_negatives=args.negatives,
        rng=np.random.default_rng(args.seed),
    )
    write_scores(args.out, items)
    print(f"score: {len(items)} labeled scores -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    items = read_scores(args.scores)
    grid = sweep_grid(args.sweep) if args.sweep else None
    csv_path = args.csv
    if grid and csv_path is None and args.out:
        csv_path = str(Path(args.out).with_suffix(".sweep.csv"))
    report = write_report(
        args.out, items, threshold=args.threshold, grid=grid,
        protocol=args.protocol, csv_path=csv_path,
    )
    p, r, f1 = report["precision"], report["recall"], report["f1"]
    fmt = lambda x: "null" if x is None else f"{x:.4f}"
    print(f"eval: threshold {args.threshold} P={fmt(p)} R={fmt(r)} F1={fmt(f1)} -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_groups=args.groups,
        variants_per_group=args.variants,
        seed=args.seed,
        transform_strength=args.strength,
    )
    documents, pairs = generate(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    policy = _load_policy(args.policy)
    if args.emit_ll:
        ll_dir = out_dir / "ll"
        ll_dir.mkdir(exist_ok=True)
        for doc in documents:
            (ll_dir / f"{doc.doc_id}.ll").write_text(doc.text, encoding="utf-8")
    records = [
        record_from_ir_text(doc.text, doc.doc_id, doc.origin, policy, language_tag="synthetic")
        for doc in documents
    ]
    write_corpus(out_dir / "corpus.jsonl", records)
    write_pairs(out_dir / "pairs.jsonl", [PairRecord(*p) for p in pairs])
    print(f"synth: {len(documents)} documents, {len(pairs)} pairs -> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irmatch",
        description="Binary-source code matching over normalized LLVM-IR",
    )
    parser.add_argument("--version", action="version", version=f"irmatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="normalize .ll files into a token corpus")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--origin", choices=["source", "binary", "auto"], default="auto")
    p.add_argument("--language", default=None)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-bpe", help="learn a BPE vocabulary from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab-size", type=int, default=8192)
    p.add_argument("--min-freq", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_bpe)

    p = sub.add_parser("pretrain", help="masked-LM pre-training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--mask-unit", choices=["token", "instruction"], default="token")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--log", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="triplet fine-tuning on paired documents")
    p.add_argument("--pairs", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--alpha", type=float, default=DEFAULT_MARGIN)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--pooling", choices=["cls", "mean"], default="cls")
    p.add_argument("--log", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a corpus into an index file")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--pooling", choices=["cls", "mean"], default="cls")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("match", help="match one .ll query against an index")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--pooling", choices=["cls", "mean"], default="cls")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("score", help="label pair/non-pair scores from an index")
    p.add_argument("--index", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--negatives", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="precision/recall/F1 and threshold sweep")
    p.add_argument("--scores", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--sweep", default=None, help="start:stop:step")
    p.add_argument("--protocol", default="1-positive-9-negatives")
    p.add_argument("--csv", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a paired synthetic corpus")
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--variants", type=int, default=2)
    p.add_argument("--strength", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", default=None)
    p.add_argument("--emit-ll", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
