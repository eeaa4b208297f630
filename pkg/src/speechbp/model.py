"""Transformer encoder over feature-text tokens with two regression heads.

Pure numpy, all float64, no autograd: `forward` retains the activations a
reverse sweep needs and `backward` replays them into exact gradients for
every parameter array.  The layout is the familiar post-norm encoder stack:
token + position embeddings, L blocks of masked multi-head self-attention
and a GELU feed-forward (each followed by residual + layernorm), a tanh
pooler over the first position, dropout on the pooled vector in train mode,
and one linear head per pressure target.

Weights live in a flat dict keyed by the names `param_shapes` defines, which
is also the serialization order of the on-disk container.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .textcodec import TokenSequence

FORMAT_VERSION = 1
INIT_STD = 0.02
MASK_BIAS = -1e9


class InvalidConfig(ValueError):
    pass


class IdOutOfRange(ValueError):
    pass


class LengthExceedsMax(ValueError):
    pass


class MissingCache(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class ChecksumMismatch(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    max_len: int = 512
    dropout_p: float = 0.1
    layernorm_epsilon: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 4:
            raise InvalidConfig("vocab_size must cover the four special ids")
        if min(self.hidden_dim, self.n_layers, self.n_heads, self.ff_dim) < 1:
            raise InvalidConfig("dimensions must be positive")
        if self.hidden_dim % self.n_heads != 0:
            raise InvalidConfig(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidConfig("dropout_p must lie in [0, 1)")
        if self.max_len < 2:
            raise InvalidConfig("max_len must admit [CLS] and [SEP]")
        if self.layernorm_epsilon <= 0.0:
            raise InvalidConfig("layernorm_epsilon must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads


@dataclass(frozen=True)
class ForwardOutput:
    sbp_pred: np.ndarray
    dbp_pred: np.ndarray
    pooled: np.ndarray
    cache: dict | None


def param_shapes(config: EncoderConfig) -> dict:
    """Name -> shape for every parameter array, in serialization order."""
    h, ff = config.hidden_dim, config.ff_dim
    shapes = {
        "token_embedding": (config.vocab_size, h),
        "position_embedding": (config.max_len, h),
    }
    for i in range(config.n_layers):
        p = f"layer{i}."
        for mat in ("wq", "wk", "wv", "wo"):
            shapes[p + mat] = (h, h)
        for vec in ("bq", "bk", "bv", "bo"):
            shapes[p + vec] = (h,)
        shapes[p + "attn_gain"] = (h,)
        shapes[p + "attn_bias"] = (h,)
        shapes[p + "w1"] = (h, ff)
        shapes[p + "b1"] = (ff,)
        shapes[p + "w2"] = (ff, h)
        shapes[p + "b2"] = (h,)
        shapes[p + "ffn_gain"] = (h,)
        shapes[p + "ffn_bias"] = (h,)
    shapes["pooler_weight"] = (h, h)
    shapes["pooler_bias"] = (h,)
    shapes["sbp_weight"] = (h, 1)
    shapes["sbp_bias"] = (1,)
    shapes["dbp_weight"] = (h, 1)
    shapes["dbp_bias"] = (1,)
    return shapes


def _truncated_normal(rng, shape, std):
    # resample anything beyond two standard deviations
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(config: EncoderConfig) -> dict:
    """Seed-deterministic init: truncated normal weights, identity norms."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(("_gain",)):
            params[name] = np.ones(shape)
        elif name.endswith(("_bias", "b1", "b2", "bq", "bk", "bv", "bo")):
            params[name] = np.zeros(shape)
        else:
            params[name] = _truncated_normal(rng, shape, INIT_STD)
    return params


def zero_gradients(config: EncoderConfig) -> dict:
    return {name: np.zeros(shape)
            for name, shape in param_shapes(config).items()}


# --- forward pieces ---------------------------------------------------------

def _batch_arrays(config, sequences):
    if not sequences:
        raise ValueError("empty batch")
    t_max = max(s.true_length for s in sequences)
    if t_max > config.max_len:
        raise LengthExceedsMax(
            f"sequence length {t_max} exceeds max_len {config.max_len}")
    # trimming to the longest real prefix is exact: trailing positions are
    # masked everywhere and nothing downstream of the mask reads them
    ids = np.stack([np.asarray(s.input_ids[:t_max]) for s in sequences])
    mask = np.stack([np.asarray(s.attention_mask[:t_max])
                     for s in sequences]).astype(np.float64)
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise IdOutOfRange(
            f"token ids must lie in [0, {config.vocab_size})")
    return ids, mask


def _split_heads(x, n_heads):
    b, t, h = x.shape
    return x.reshape(b, t, n_heads, h // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, a, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, a * dh)


def _layer_norm(x, gain, bias, eps):
    # epsilon floors the denominator instead of padding the variance, so on
    # any non-degenerate input the normalized vector has variance exactly 1
    mu = x.mean(axis=-1, keepdims=True)
    sd = np.sqrt(x.var(axis=-1, keepdims=True))
    inv = 1.0 / np.maximum(sd, eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, xhat, inv, sd >= eps


def _layer_norm_backward(d_out, xhat, inv, live, gain):
    d_gain = np.sum(d_out * xhat, axis=tuple(range(d_out.ndim - 1)))
    d_bias = np.sum(d_out, axis=tuple(range(d_out.ndim - 1)))
    d_xhat = d_out * gain
    m1 = d_xhat.mean(axis=-1, keepdims=True)
    m2 = (d_xhat * xhat).mean(axis=-1, keepdims=True)
    # on the floored branch the denominator is a constant, so the variance
    # term of the jacobian vanishes
    d_x = inv * (d_xhat - m1 - xhat * m2 * live)
    return d_x, d_gain, d_bias


_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu(u):
    # tanh form: 0.5 * u * (1 + tanh(sqrt(2/pi) * (u + 0.044715 u^3)))
    t = np.tanh(_GELU_C * (u + 0.044715 * u ** 3))
    return 0.5 * u * (1.0 + t), t


def _gelu_backward(d_out, u, t):
    du_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * u ** 2)
    return d_out * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * du_inner)


def _softmax_rows(scores):
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(config: EncoderConfig, params: dict,
            sequences: Sequence[TokenSequence], mode: str = "eval",
            dropout_seed=0) -> ForwardOutput:
    """Run the encoder on a batch; train mode retains the backward cache."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    ids, mask = _batch_arrays(config, sequences)
    b, t = ids.shape
    scale = 1.0 / np.sqrt(config.head_dim)

    x = params["token_embedding"][ids] + params["position_embedding"][:t]
    # keys at masked positions get a -1e9 logit, which underflows to an
    # exactly zero attention weight after the softmax
    key_bias = (1.0 - mask)[:, None, None, :] * MASK_BIAS

    layers = []
    for i in range(config.n_layers):
        p = f"layer{i}."
        q = _split_heads(x @ params[p + "wq"] + params[p + "bq"],
                         config.n_heads)
        k = _split_heads(x @ params[p + "wk"] + params[p + "bk"],
                         config.n_heads)
        v = _split_heads(x @ params[p + "wv"] + params[p + "bv"],
                         config.n_heads)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + key_bias
        attn = _softmax_rows(scores)
        ctx = _merge_heads(attn @ v)
        attn_out = ctx @ params[p + "wo"] + params[p + "bo"]
        y1, ln1_xhat, ln1_inv, ln1_live = _layer_norm(
            x + attn_out, params[p + "attn_gain"], params[p + "attn_bias"],
            config.layernorm_epsilon)
        h1 = y1 @ params[p + "w1"] + params[p + "b1"]
        g, gelu_t = _gelu(h1)
        ffn_out = g @ params[p + "w2"] + params[p + "b2"]
        y2, ln2_xhat, ln2_inv, ln2_live = _layer_norm(
            y1 + ffn_out, params[p + "ffn_gain"], params[p + "ffn_bias"],
            config.layernorm_epsilon)
        layers.append({"x_in": x, "q": q, "k": k, "v": v, "attn": attn,
                       "ctx": ctx, "ln1_xhat": ln1_xhat, "ln1_inv": ln1_inv,
                       "ln1_live": ln1_live, "y1": y1, "h1": h1,
                       "gelu_t": gelu_t, "g": g, "ln2_xhat": ln2_xhat,
                       "ln2_inv": ln2_inv, "ln2_live": ln2_live})
        x = y2

    pooled_pre = x[:, 0, :] @ params["pooler_weight"] + params["pooler_bias"]
    pooled = np.tanh(pooled_pre)

    if mode == "train":
        rng = np.random.default_rng(dropout_seed)
        keep = rng.random(size=pooled.shape) >= config.dropout_p
        drop_scale = keep / (1.0 - config.dropout_p)   # inverted scaling
    else:
        drop_scale = np.ones_like(pooled)
    dropped = pooled * drop_scale

    sbp = dropped @ params["sbp_weight"] + params["sbp_bias"]
    dbp = dropped @ params["dbp_weight"] + params["dbp_bias"]

    cache = None
    if mode == "train":
        cache = {"ids": ids, "mask": mask, "layers": layers,
                 "state0": x[:, 0, :], "pooled": pooled,
                 "drop_scale": drop_scale, "dropped": dropped,
                 "seq_len": t}
    return ForwardOutput(sbp_pred=sbp, dbp_pred=dbp, pooled=pooled,
                         cache=cache)


def backward(config: EncoderConfig, params: dict, output: ForwardOutput,
             grad_sbp: np.ndarray, grad_dbp: np.ndarray) -> dict:
    """Exact reverse sweep; upstream grads are d loss / d head outputs."""
    cache = output.cache
    if cache is None:
        raise MissingCache("backward needs a train-mode forward cache")
    grad_sbp = np.asarray(grad_sbp, dtype=np.float64).reshape(-1, 1)
    grad_dbp = np.asarray(grad_dbp, dtype=np.float64).reshape(-1, 1)
    grads = zero_gradients(config)
    t = cache["seq_len"]
    scale = 1.0 / np.sqrt(config.head_dim)

    grads["sbp_weight"] = cache["dropped"].T @ grad_sbp
    grads["sbp_bias"] = grad_sbp.sum(axis=0)
    grads["dbp_weight"] = cache["dropped"].T @ grad_dbp
    grads["dbp_bias"] = grad_dbp.sum(axis=0)

    d_dropped = (grad_sbp @ params["sbp_weight"].T
                 + grad_dbp @ params["dbp_weight"].T)
    d_pooled = d_dropped * cache["drop_scale"]
    d_pooled_pre = d_pooled * (1.0 - cache["pooled"] ** 2)

    grads["pooler_weight"] = cache["state0"].T @ d_pooled_pre
    grads["pooler_bias"] = d_pooled_pre.sum(axis=0)

    d_x = np.zeros((grad_sbp.shape[0], t, config.hidden_dim))
    d_x[:, 0, :] = d_pooled_pre @ params["pooler_weight"].T

    for i in reversed(range(config.n_layers)):
        p = f"layer{i}."
        c = cache["layers"][i]

        d_res2, grads[p + "ffn_gain"], grads[p + "ffn_bias"] = \
            _layer_norm_backward(d_x, c["ln2_xhat"], c["ln2_inv"],
                                 c["ln2_live"], params[p + "ffn_gain"])
        d_y1 = d_res2.copy()
        d_g = d_res2 @ params[p + "w2"].T
        grads[p + "w2"] = _flat(c["g"]).T @ _flat(d_res2)
        grads[p + "b2"] = d_res2.sum(axis=(0, 1))
        d_h1 = _gelu_backward(d_g, c["h1"], c["gelu_t"])
        grads[p + "w1"] = _flat(c["y1"]).T @ _flat(d_h1)
        grads[p + "b1"] = d_h1.sum(axis=(0, 1))
        d_y1 += d_h1 @ params[p + "w1"].T

        d_res1, grads[p + "attn_gain"], grads[p + "attn_bias"] = \
            _layer_norm_backward(d_y1, c["ln1_xhat"], c["ln1_inv"],
                                 c["ln1_live"], params[p + "attn_gain"])
        d_x = d_res1.copy()
        d_ctx = d_res1 @ params[p + "wo"].T
        grads[p + "wo"] = _flat(c["ctx"]).T @ _flat(d_res1)
        grads[p + "bo"] = d_res1.sum(axis=(0, 1))

        d_ctx_h = _split_heads(d_ctx, config.n_heads)
        attn = c["attn"]
        d_attn = d_ctx_h @ c["v"].transpose(0, 1, 3, 2)
        d_v = attn.transpose(0, 1, 3, 2) @ d_ctx_h
        # softmax jacobian; rows with zero weight contribute zero, so the
        # additive mask constant never leaks gradient
        d_scores = attn * (d_attn
                           - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_q = d_scores @ c["k"] * scale
        d_k = d_scores.transpose(0, 1, 3, 2) @ c["q"] * scale

        x_in = c["x_in"]
        for mat, vec, dh in (("wq", "bq", d_q), ("wk", "bk", d_k),
                             ("wv", "bv", d_v)):
            d_m = _merge_heads(dh)
            grads[p + mat] = _flat(x_in).T @ _flat(d_m)
            grads[p + vec] = d_m.sum(axis=(0, 1))
            d_x += d_m @ params[p + mat].T

    np.add.at(grads["token_embedding"], cache["ids"].ravel(),
              _flat(d_x))
    grads["position_embedding"][:t] = d_x.sum(axis=0)
    return grads


def _flat(x):
    return x.reshape(-1, x.shape[-1])


# --- persistence ------------------------------------------------------------

def save_params(path, config: EncoderConfig, params: dict) -> None:
    """Container: u64 header length, JSON header, little-endian f8 payload."""
    path = Path(path)
    names = list(param_shapes(config))
    index = []
    chunks = []
    offset = 0
    for name in names:
        raw = np.ascontiguousarray(params[name], dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(params[name].shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "arrays": index,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_params(path):
    """Read a weight container back into (config, params); verifies layout
    against the declared config and the payload against its checksum."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ChecksumMismatch("file shorter than its own header length")
    (header_len,) = struct.unpack_from("<Q", raw, 0)
    if len(raw) < 8 + header_len:
        raise ChecksumMismatch("truncated header")
    header = json.loads(raw[8:8 + header_len].decode("utf-8"))

    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"container version {header.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}")

    config = EncoderConfig(**header["config"])
    expected = param_shapes(config)
    index = header["arrays"]
    if [e["name"] for e in index] != list(expected):
        raise ShapeMismatch("array index does not match the config layout")
    offset = 0
    for entry in index:
        shape = tuple(entry["shape"])
        if shape != expected[entry["name"]]:
            raise ShapeMismatch(
                f"{entry['name']}: header shape {shape}, "
                f"config expects {expected[entry['name']]}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
        if entry["offset"] != offset or entry["nbytes"] != nbytes:
            raise ShapeMismatch(f"{entry['name']}: inconsistent extent")
        offset += nbytes

    payload = raw[8 + header_len:]
    if len(payload) != header["payload_bytes"] or offset != len(payload):
        raise ChecksumMismatch("payload length does not match header")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumMismatch("payload checksum mismatch")

    params = {}
    for entry in index:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count,
                            offset=entry["offset"])
        params[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return config, params
