"""Transformer encoder over token-id sequences, with explicit backprop.

Pre-norm residual blocks, learned absolute positions, GELU feed-forward,
and attention logits scaled by sqrt(d_model). Everything runs in float64
numpy; gradients are computed by hand-written reverse passes so training
is exactly reproducible from a seed. Dropout (train mode only) applies to
attention weights and feed-forward activations, drawn from a caller-owned
generator.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .bpe import TokenSequence
from .errors import (
    EmptySequence,
    IdOutOfRange,
    LengthExceeded,
    NonFiniteLoss,
    ShapeMismatch,
)

_LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 4
    ffn_dim: int = 1024
    max_len: int = 512
    dropout: float = 0.4

    def __post_init__(self):
        if min(self.vocab_size, self.d_model, self.n_heads, self.n_layers,
               self.ffn_dim, self.max_len) <= 0:
            raise ValueError("all model dimensions must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


class EncoderModel:
    """Parameter store plus config. Parameters are float64 arrays keyed
    by dotted names; training mutates them in place."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(config: ModelConfig, seed: int = 0) -> EncoderModel:
    """Gaussian(0, 0.02) weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    sigma = 0.02
    d, f = config.d_model, config.ffn_dim
    params: dict[str, np.ndarray] = {
        "tok_emb": rng.normal(0.0, sigma, (config.vocab_size, d)),
        "pos_emb": rng.normal(0.0, sigma, (config.max_len, d)),
        "ln_f.g": np.ones(d),
        "ln_f.b": np.zeros(d),
        "mlm_bias": np.zeros(config.vocab_size),
    }
    for k in range(config.n_layers):
        p = f"layers.{k}."
        params[p + "ln1.g"] = np.ones(d)
        params[p + "ln1.b"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[p + "attn." + name] = rng.normal(0.0, sigma, (d, d))
        for name in ("bq", "bk", "bv", "bo"):
            params[p + "attn." + name] = np.zeros(d)
        params[p + "ln2.g"] = np.ones(d)
        params[p + "ln2.b"] = np.zeros(d)
        params[p + "ffn.w1"] = rng.normal(0.0, sigma, (d, f))
        params[p + "ffn.b1"] = np.zeros(f)
        params[p + "ffn.w2"] = rng.normal(0.0, sigma, (f, d))
        params[p + "ffn.b2"] = np.zeros(d)
    return EncoderModel(config, params)


def init_grads(model: EncoderModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


# --- primitive ops -------------------------------------------------------

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax; -inf entries get weight exactly 0."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    inner = np.sum(dprobs * probs, axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    d_model: Optional[int] = None,
    key_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """softmax(q k^T / sqrt(d_model)) v for 2-D inputs.

    Masked key positions (key_mask 0) receive -inf logits and thus exactly
    zero weight. d_model defaults to the query width.
    """
    q, k, v = np.asarray(q, dtype=float), np.asarray(k, dtype=float), np.asarray(v, dtype=float)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeMismatch("attention expects 2-D q, k, v")
    if q.shape[1] != k.shape[1]:
        raise ShapeMismatch(f"q width {q.shape[1]} != k width {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"k rows {k.shape[0]} != v rows {v.shape[0]}")
    scale_dim = d_model if d_model is not None else q.shape[1]
    scores = (q @ k.T) / np.sqrt(float(scale_dim))
    if key_mask is not None:
        key_mask = np.asarray(key_mask)
        if key_mask.shape[0] != k.shape[0]:
            raise ShapeMismatch("key_mask length != number of keys")
        scores = np.where(key_mask[None, :] != 0, scores, -np.inf)
    return softmax(scores, axis=-1) @ v


def _layernorm_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_backward(dy, cache, g, grads, g_name, b_name):
    xhat, inv = cache
    reduce_axes = tuple(range(dy.ndim - 1))
    grads[g_name] += np.sum(dy * xhat, axis=reduce_axes)
    grads[b_name] += np.sum(dy, axis=reduce_axes)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (dxhat - m1 - xhat * m2)


def _gelu_forward(x: np.ndarray):
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def _dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return keep.astype(float) / (1.0 - rate)


# --- encoder forward / backward ------------------------------------------

def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def encode_batch(
    model: EncoderModel,
    ids: np.ndarray,
    mask: np.ndarray,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
):
    """Forward pass over a (batch, seq) id matrix. Returns the final
    hidden states (batch, seq, d_model) and the cache for backward."""
    cfg = model.config
    p = model.params
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=float)
    if ids.ndim == 1:
        ids = ids[None, :]
        mask = mask[None, :]
    if ids.shape[1] > cfg.max_len:
        raise LengthExceeded(f"sequence length {ids.shape[1]} > max_len {cfg.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise IdOutOfRange("token id outside [0, vocab_size)")
    drop = cfg.dropout if train_mode else 0.0
    if drop > 0.0 and rng is None:
        raise ValueError("train-mode encode with dropout > 0 needs an rng")

    b, n = ids.shape
    x = p["tok_emb"][ids] + p["pos_emb"][:n][None, :, :]
    inv_scale = 1.0 / np.sqrt(float(cfg.d_model))
    key_ok = mask[:, None, None, :] != 0

    layer_caches = []
    for k in range(cfg.n_layers):
        lp = f"layers.{k}."
        x_in = x
        h1, ln1_cache = _layernorm_forward(x_in, p[lp + "ln1.g"], p[lp + "ln1.b"])
        q = _split_heads(h1 @ p[lp + "attn.wq"] + p[lp + "attn.bq"], cfg.n_heads)
        kk = _split_heads(h1 @ p[lp + "attn.wk"] + p[lp + "attn.bk"], cfg.n_heads)
        v = _split_heads(h1 @ p[lp + "attn.wv"] + p[lp + "attn.bv"], cfg.n_heads)
        scores = np.where(key_ok, np.matmul(q, kk.transpose(0, 1, 3, 2)) * inv_scale, -np.inf)
        probs = softmax(scores, axis=-1)
        if drop > 0.0:
            attn_drop = _dropout_mask(rng, probs.shape, drop)
            probs_d = probs * attn_drop
        else:
            attn_drop = None
            probs_d = probs
        ctx = _merge_heads(np.matmul(probs_d, v))
        attn_out = ctx @ p[lp + "attn.wo"] + p[lp + "attn.bo"]
        x_mid = x_in + attn_out

        h2, ln2_cache = _layernorm_forward(x_mid, p[lp + "ln2.g"], p[lp + "ln2.b"])
        pre = h2 @ p[lp + "ffn.w1"] + p[lp + "ffn.b1"]
        act, gelu_t = _gelu_forward(pre)
        if drop > 0.0:
            ffn_drop = _dropout_mask(rng, act.shape, drop)
            act_d = act * ffn_drop
        else:
            ffn_drop = None
            act_d = act
        ffn_out = act_d @ p[lp + "ffn.w2"] + p[lp + "ffn.b2"]
        x = x_mid + ffn_out

        layer_caches.append({
            "h1": h1, "ln1": ln1_cache, "q": q, "k": kk, "v": v,
            "probs": probs, "attn_drop": attn_drop, "probs_d": probs_d,
            "ctx": ctx, "x_mid": x_mid, "h2": h2, "ln2": ln2_cache,
            "pre": pre, "gelu_t": gelu_t, "ffn_drop": ffn_drop, "act_d": act_d,
        })

    hidden, lnf_cache = _layernorm_forward(x, p["ln_f.g"], p["ln_f.b"])
    cache = {
        "ids": ids, "mask": mask, "layers": layer_caches,
        "lnf": lnf_cache, "inv_scale": inv_scale, "n": n,
    }
    return hidden, cache


def backward_batch(
    model: EncoderModel,
    cache: dict,
    dhidden: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate parameter gradients for a forward pass recorded in cache."""
    cfg = model.config
    p = model.params
    ids, n = cache["ids"], cache["n"]
    b = ids.shape[0]
    inv_scale = cache["inv_scale"]

    dx = _layernorm_backward(dhidden, cache["lnf"], p["ln_f.g"], grads, "ln_f.g", "ln_f.b")

    for k in reversed(range(cfg.n_layers)):
        lp = f"layers.{k}."
        lc = cache["layers"][k]

        # feed-forward branch
        dffn_out = dx
        flat_dffn = dffn_out.reshape(-1, cfg.d_model)
        grads[lp + "ffn.w2"] += lc["act_d"].reshape(-1, cfg.ffn_dim).T @ flat_dffn
        grads[lp + "ffn.b2"] += flat_dffn.sum(axis=0)
        dact_d = dffn_out @ p[lp + "ffn.w2"].T
        dact = dact_d * lc["ffn_drop"] if lc["ffn_drop"] is not None else dact_d
        dpre = _gelu_backward(dact, lc["pre"], lc["gelu_t"])
        flat_dpre = dpre.reshape(-1, cfg.ffn_dim)
        grads[lp + "ffn.w1"] += lc["h2"].reshape(-1, cfg.d_model).T @ flat_dpre
        grads[lp + "ffn.b1"] += flat_dpre.sum(axis=0)
        dh2 = dpre @ p[lp + "ffn.w1"].T
        dx_mid = dx + _layernorm_backward(dh2, lc["ln2"], p[lp + "ln2.g"], grads,
                                          lp + "ln2.g", lp + "ln2.b")

        # attention branch
        dattn_out = dx_mid
        flat_dattn = dattn_out.reshape(-1, cfg.d_model)
        grads[lp + "attn.wo"] += lc["ctx"].reshape(-1, cfg.d_model).T @ flat_dattn
        grads[lp + "attn.bo"] += flat_dattn.sum(axis=0)
        dctx = _split_heads(dattn_out @ p[lp + "attn.wo"].T, cfg.n_heads)
        dprobs_d = np.matmul(dctx, lc["v"].transpose(0, 1, 3, 2))
        dv = np.matmul(lc["probs_d"].transpose(0, 1, 3, 2), dctx)
        dprobs = dprobs_d * lc["attn_drop"] if lc["attn_drop"] is not None else dprobs_d
        dscores = _softmax_backward(lc["probs"], dprobs) * inv_scale
        dq = np.matmul(dscores, lc["k"])
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), lc["q"])

        dh1 = np.zeros_like(lc["h1"])
        h1_flat = lc["h1"].reshape(-1, cfg.d_model)
        for name, dhead in (("wq", dq), ("wk", dk), ("wv", dv)):
            flat = _merge_heads(dhead).reshape(-1, cfg.d_model)
            grads[lp + "attn." + name] += h1_flat.T @ flat
            grads[lp + "attn.b" + name[1]] += flat.sum(axis=0)
            dh1 += (flat @ p[lp + "attn." + name].T).reshape(lc["h1"].shape)
        dx = dx_mid + _layernorm_backward(dh1, lc["ln1"], p[lp + "ln1.g"], grads,
                                          lp + "ln1.g", lp + "ln1.b")

    flat_dx = dx.reshape(-1, cfg.d_model)
    np.add.at(grads["tok_emb"], ids.reshape(-1), flat_dx)
    grads["pos_emb"][:n] += dx.sum(axis=0)


def encode(
    model: EncoderModel,
    seq: TokenSequence,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Final-layer hidden states (seq length, d_model) for one sequence."""
    hidden, _ = encode_batch(
        model,
        np.asarray(seq.ids),
        np.asarray(seq.attention_mask),
        train_mode=train_mode,
        rng=rng,
    )
    return hidden[0]


def pool(hidden: np.ndarray, mask, strategy: str = "cls") -> np.ndarray:
    """Reduce per-token states to one vector: row 0 (`cls`) or the
    mask-weighted mean of non-pad rows (`mean`)."""
    hidden = np.asarray(hidden, dtype=float)
    if hidden.ndim != 2 or hidden.shape[0] == 0:
        raise EmptySequence("pool needs a non-empty (n, d) matrix")
    if strategy == "cls":
        return hidden[0].copy()
    if strategy == "mean":
        m = np.asarray(mask, dtype=float)
        total = m.sum()
        if total == 0:
            raise EmptySequence("mean pooling over an all-pad mask")
        return (hidden * m[:, None]).sum(axis=0) / total
    raise ValueError(f"unknown pooling strategy {strategy!r}")


def pool_backward(dvec: np.ndarray, n: int, mask, strategy: str) -> np.ndarray:
    dh = np.zeros((n, dvec.shape[0]))
    if strategy == "cls":
        dh[0] = dvec
    else:
        m = np.asarray(mask, dtype=float)
        dh += np.outer(m, dvec) / m.sum()
    return dh


def gradients(loss_head: str, model: EncoderModel, batch, rng=None, **kwargs):
    """Loss value plus a parameter-shaped gradient dict for one batch.

    loss_head selects the objective: "mlm_loss" takes a MaskedBatch,
    "triplet_loss" a list of encoded triplets. Raises NonFiniteLoss if
    anything overflows.
    """
    if loss_head == "mlm_loss":
        from .mlm import mlm_loss_and_grads
        loss, grads = mlm_loss_and_grads(model, batch, rng=rng, **kwargs)
    elif loss_head == "triplet_loss":
        from .triplet import triplet_loss_and_grads
        loss, grads = triplet_loss_and_grads(model, batch, rng=rng, **kwargs)
    else:
        raise ValueError(f"unknown loss head {loss_head!r}")
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"{loss_head} produced {loss}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(f"non-finite gradient for {name}")
    return loss, grads
