"""Positional encoding, masked attention and the encoder/decoder blocks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from quartet import numcore as nc
from quartet.numcore import Tensor

MASK_KINDS = ("none", "causal-strict", "causal-inclusive")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BlockConfig:
    d_model: int = 256
    heads: int = 8
    ffn_dim: int | None = None
    dropout: float = 0.1
    depth: int = 2

    def __post_init__(self):
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def ffn(self) -> int:
        return self.ffn_dim or self.d_model


@dataclass(frozen=True)
class AttentionMask:
    """Which key positions each query position may read.

    ``segment`` splits the sequence into equal consecutive segments and
    blocks attention across segment boundaries.
    """

    kind: str = "none"
    segment: int | None = None

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ConfigError(f"unknown mask kind {self.kind!r}")

    def allowed(self, n: int, m: int | None = None) -> np.ndarray | None:
        m = n if m is None else m
        if self.kind == "none" and self.segment is None:
            return None
        q = np.arange(n)[:, None]
        k = np.arange(m)[None, :]
        if self.kind == "causal-strict":
            ok = k < q
        elif self.kind == "causal-inclusive":
            ok = k <= q
        else:
            ok = np.ones((n, m), dtype=bool)
        if self.segment:
            ok = ok & (q // self.segment == k // self.segment)
        return ok


NO_MASK = AttentionMask("none")


def positional_encoding(seq_len: int, d_model: int, dtype=None) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd columns."""
    if d_model % 2:
        raise ConfigError("positional encoding needs an even d_model")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.empty((seq_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(dtype or nc.default_dtype())


def sdpa(Q: Tensor, K: Tensor, V: Tensor, mask: AttentionMask | np.ndarray | None = None) -> Tensor:
    """``softmax(Q K^T / sqrt(d_k)) V`` over the last two axes.

    ``mask`` is an :class:`AttentionMask` or an explicit boolean (n, m)
    array of allowed positions.
    """
    n, dk = Q.shape[-2], Q.shape[-1]
    m = K.shape[-2]
    if K.shape[-1] != dk:
        raise nc.ShapeError(f"sdpa: query width {dk} vs key width {K.shape[-1]}")
    if V.shape[-2] != m:
        raise nc.ShapeError(f"sdpa: {m} keys vs {V.shape[-2]} values")
    if isinstance(mask, AttentionMask):
        allowed = mask.allowed(n, m)
    else:
        allowed = mask
    if allowed is not None and allowed.shape != (n, m):
        raise nc.ShapeError(f"sdpa: mask shape {allowed.shape} vs scores ({n}, {m})")
    axes = list(range(K.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    scores = nc.mul(nc.matmul(Q, nc.transpose(K, axes)), 1.0 / math.sqrt(dk))
    weights = nc.softmax(scores, axis=-1, allowed=allowed)
    return nc.matmul(weights, V)


class Module:
    """Owns named parameters; ``params()`` lists them in a fixed order."""

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        self._collect("", out)
        return out

    def _collect(self, prefix, out):
        for key, val in self.__dict__.items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + key] = val
            elif isinstance(val, Module):
                val._collect(f"{prefix}{key}.", out)
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        item._collect(f"{prefix}{key}.{i}.", out)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)).astype(nc.default_dtype())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.W = nc.parameter(glorot(rng, d_in, d_out))
        self.b = nc.parameter(np.zeros(d_out, dtype=nc.default_dtype()))

    def __call__(self, x: Tensor) -> Tensor:
        return nc.dense(x, self.W, self.b)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = nc.parameter(np.ones(d, dtype=nc.default_dtype()))
        self.bias = nc.parameter(np.zeros(d, dtype=nc.default_dtype()))

    def __call__(self, x: Tensor) -> Tensor:
        return nc.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention(Module):
    """Per-head projections of width ``head_dim``, concatenated, then projected."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        self.heads = cfg.heads
        self.head_dim = cfg.head_dim
        d = cfg.d_model
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        *lead, T, _ = x.shape
        y = nc.reshape(x, (*lead, T, self.heads, self.head_dim))
        nd = len(lead)
        return nc.transpose(y, (*range(nd), nd + 1, nd, nd + 2))

    def _merge(self, x: Tensor) -> Tensor:
        *lead, H, T, dh = x.shape
        nd = len(lead)
        y = nc.transpose(x, (*range(nd), nd + 1, nd, nd + 2))
        return nc.reshape(y, (*lead, T, H * dh))

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor, mask=None) -> Tensor:
        if q_in.shape[-1] != self.heads * self.head_dim:
            raise nc.ShapeError(f"multi-head attention expects width {self.heads * self.head_dim}, got {q_in.shape[-1]}")
        Q = self._split(self.q(q_in))
        K = self._split(self.k(k_in))
        V = self._split(self.v(v_in))
        return self.o(self._merge(sdpa(Q, K, V, mask)))


class FeedForward(Module):
    def __init__(self, cfg: BlockConfig, rng):
        self.inner = Linear(cfg.d_model, cfg.ffn, rng)
        self.outer = Linear(cfg.ffn, cfg.d_model, rng)

    def __call__(self, x):
        return self.outer(nc.relu(self.inner(x)))


def _add_norm(norm: LayerNorm, residual: Tensor, sub: Tensor, rate: float, train: bool, rng) -> Tensor:
    return norm(nc.dropout(nc.add(residual, sub), rate, train, rng))


class EncoderBlock(Module):
    """Self-attention then feed-forward, each as Add -> Dropout -> LayerNorm."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.attn = MultiHeadAttention(cfg, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg, rng)
        self.norm2 = LayerNorm(cfg.d_model)

    def __call__(self, x: Tensor, mask=None, train: bool = False, rng=None) -> Tensor:
        rate = self.cfg.dropout
        h = _add_norm(self.norm1, x, self.attn(x, x, x, mask), rate, train, rng)
        return _add_norm(self.norm2, h, self.ffn(h), rate, train, rng)


class CrossBlock(EncoderBlock):
    """Encoder-shaped block whose attention reads keys/values from another stream."""

    def __call__(self, q_stream: Tensor, kv_stream: Tensor, mask=None, train: bool = False, rng=None) -> Tensor:
        rate = self.cfg.dropout
        h = _add_norm(self.norm1, q_stream, self.attn(q_stream, kv_stream, kv_stream, mask), rate, train, rng)
        return _add_norm(self.norm2, h, self.ffn(h), rate, train, rng)


class DecoderBlock(Module):
    """Standard decoder: causal self-attention, cross-attention, feed-forward."""

    def __init__(self, cfg: BlockConfig, rng):
        self.cfg = cfg
        self.self_attn = MultiHeadAttention(cfg, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg, rng)
        self.norm3 = LayerNorm(cfg.d_model)

    def __call__(self, x, memory, self_mask=None, cross_mask=None, train=False, rng=None):
        rate = self.cfg.dropout
        h = _add_norm(self.norm1, x, self.self_attn(x, x, x, self_mask), rate, train, rng)
        h = _add_norm(self.norm2, h, self.cross_attn(h, memory, memory, cross_mask), rate, train, rng)
        return _add_norm(self.norm3, h, self.ffn(h), rate, train, rng)


def multi_head(Q: Tensor, K: Tensor, V: Tensor, cfg: BlockConfig, mask=None, rng=None, layer=None) -> Tensor:
    """Functional form of :class:`MultiHeadAttention`; builds fresh projections unless ``layer`` is given."""
    if layer is None:
        layer = MultiHeadAttention(cfg, rng if rng is not None else np.random.default_rng(0))
    return layer(Q, K, V, mask)
