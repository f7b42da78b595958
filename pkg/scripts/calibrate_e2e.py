"""Desk-scale end-to-end calibration: synth -> bpe -> pretrain -> finetune
-> held-out evaluation. Mirrors the acceptance run; prints timings."""

import sys
import time

import numpy as np

from irmatch.bpe import build_model_input, encode as bpe_encode, train_bpe
from irmatch.corpus import record_from_ir_text
from irmatch.encoder import ModelConfig, encode, init_model, pool
from irmatch.evaluate import pair_protocol_scores, precision_recall_f1, threshold_sweep
from irmatch.ir import NormalizePolicy
from irmatch.matcher import EmbeddingIndex, IndexEntry
from irmatch.mlm import PretrainConfig, pretrain
from irmatch.synth import SynthSpec, generate
from irmatch.triplet import FinetuneConfig, PairedCorpus, finetune

SEED = 7
PRETRAIN_STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 500
FINETUNE_STEPS = int(sys.argv[2]) if len(sys.argv) > 2 else 300
D_MODEL = int(sys.argv[3]) if len(sys.argv) > 3 else 64
MAX_LEN = int(sys.argv[4]) if len(sys.argv) > 4 else 192
BATCH = int(sys.argv[5]) if len(sys.argv) > 5 else 16

t0 = time.time()
docs, pairs = generate(SynthSpec(n_groups=50, variants_per_group=2, seed=SEED,
                                 transform_strength=0.5))
policy = NormalizePolicy()
streams = {d.doc_id: record_from_ir_text(d.text, d.doc_id, d.origin, policy).tokens
           for d in docs}
lengths = sorted(len(s) for s in streams.values())
print(f"[{time.time()-t0:6.1f}s] synth: {len(docs)} docs, stream len "
      f"min={lengths[0]} med={lengths[len(lengths)//2]} max={lengths[-1]}")

vocab = train_bpe(list(streams.values()), vocab_size=512, min_freq=2)
encoded = {k: bpe_encode(vocab, s) for k, s in streams.items()}
enc_lengths = sorted(len(s) for s in encoded.values())
print(f"[{time.time()-t0:6.1f}s] bpe: vocab {len(vocab)}, merges {len(vocab.merges)}, "
      f"encoded med={enc_lengths[len(enc_lengths)//2]} max={enc_lengths[-1]}")

config = ModelConfig(vocab_size=len(vocab), d_model=D_MODEL, n_heads=4, n_layers=2,
                     ffn_dim=4 * D_MODEL, max_len=MAX_LEN, dropout=0.4)
ordered = [encoded[k] for k in sorted(encoded)]
model, history = pretrain(ordered, config, PretrainConfig(steps=PRETRAIN_STEPS, batch_size=BATCH), seed=SEED)
if history:
    first = np.mean([l for _, l in history[:10]])
    last = np.mean([l for _, l in history[-10:]])
    print(f"[{time.time()-t0:6.1f}s] pretrain: loss {first:.3f} -> {last:.3f} (ratio {last/first:.3f})")

held_groups = {f"g{g:04d}" for g in range(45, 50)}
train_pairs = [p for p in pairs if p[2] not in held_groups]
held_pairs = [p for p in pairs if p[2] in held_groups]
corpus = PairedCorpus(pairs=train_pairs, docs=encoded, max_len=MAX_LEN)
model, ft_history = finetune(model, corpus, FinetuneConfig(steps=FINETUNE_STEPS, batch_size=BATCH), seed=SEED)
print(f"[{time.time()-t0:6.1f}s] finetune: last sim+ {ft_history[-1][2]:.3f} sim- {ft_history[-1][3]:.3f}")

embeds = {}
for doc_id, ids in encoded.items():
    seq = build_model_input(ids, None, MAX_LEN)
    embeds[doc_id] = pool(encode(model, seq), seq.attention_mask, "cls")
index = EmbeddingIndex(model_fingerprint="x" * 64, dim=D_MODEL)
for doc_id, vec in embeds.items():
    index.add(IndexEntry(doc_id, vec))
print(f"[{time.time()-t0:6.1f}s] embedded {len(embeds)} docs")

for name, subset in (("train", train_pairs), ("held-out", held_pairs)):
    items = pair_protocol_scores(index, subset, n_negatives=9, rng=np.random.default_rng(SEED))
    pos = [i.score for i in items if i.is_clone]
    neg = [i.score for i in items if not i.is_clone]
    gap = np.mean(pos) - np.mean(neg)
    m = precision_recall_f1(items, 0.8)
    grid = [round(0.5 + 0.02 * i, 2) for i in range(25)]
    points, best = threshold_sweep(items, grid)
    r_05 = points[0][1].recall
    r_98 = points[-1][1].recall
    print(f"  {name}: pos {np.mean(pos):.3f} neg {np.mean(neg):.3f} gap {gap:.3f} "
          f"F1@0.8 {m.f1 if m.f1 is None else round(m.f1,3)} "
          f"P {m.precision and round(m.precision,3)} R {m.recall and round(m.recall,3)} "
          f"recall@0.5 {r_05} recall@0.98 {r_98} bestF1@{best}")
print(f"[{time.time()-t0:6.1f}s] total")
