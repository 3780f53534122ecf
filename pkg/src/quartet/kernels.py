"""Hot inner loops shared by the autodiff core and the rank statistics.

Every kernel has a vectorised numpy implementation and a numba loop
implementation with identical semantics.  The active backend is chosen at
import time from :data:`quartet._accel.USE_NUMBA` and can be switched with
:func:`set_backend`.  Loop kernels sum in a fixed order, so each backend is
bitwise reproducible on its own; the two backends agree to rounding error.
"""

from __future__ import annotations

import numpy as np

from quartet import _accel
from quartet._accel import njit

MASK_SENTINEL = -1e9


# --------------------------------------------------------------------------
# numpy reference path


def _softmax_np(x, allowed):
    # x: (G, T, M); allowed: (T, M) bool
    s = np.where(allowed, x, MASK_SENTINEL)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    e = np.where(allowed, e, 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    return out.astype(x.dtype, copy=False)


def _softmax_bwd_np(p, g):
    inner = (g * p).sum(axis=-1, keepdims=True)
    return p * (g - inner)


def _layernorm_np(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def _layernorm_bwd_np(g, xhat, rstd, gain):
    d = xhat.shape[1]
    gxhat = g * gain
    dx = (rstd[:, None] / d) * (
        d * gxhat - gxhat.sum(axis=1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=1, keepdims=True)
    )
    return dx, (g * xhat).sum(axis=0), g.sum(axis=0)


def _sparse_ce_np(logits, targets):
    n = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    losses = lse - z[rows, targets]
    grad = np.exp(z - lse[:, None])
    grad[rows, targets] -= 1.0
    return losses, grad / n


def _midrank_np(x):
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    # group boundaries of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    mids = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(mids, ends - starts)
    return ranks


def _signed_rank_counts_np(doubled):
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    reach = 0
    for r in doubled:
        r = int(r)
        counts[r:reach + r + 1] += counts[:reach + 1].copy()
        reach += r
    return counts


# --------------------------------------------------------------------------
# numba loop path


@njit(cache=True)
def _softmax_nb(x, allowed):
    G, T, M = x.shape
    out = np.zeros_like(x)
    for g in range(G):
        for t in range(T):
            # start from an allowed entry so the max keeps x's dtype
            first = -1
            for j in range(M):
                if allowed[t, j]:
                    first = j
                    break
            if first < 0:
                continue
            mx = x[g, t, first]
            for j in range(first + 1, M):
                if allowed[t, j] and x[g, t, j] > mx:
                    mx = x[g, t, j]
            s = 0.0
            for j in range(first, M):
                if allowed[t, j]:
                    e = np.exp(x[g, t, j] - mx)
                    out[g, t, j] = e
                    s += e
            inv = out.dtype.type(1.0 / s)
            for j in range(first, M):
                out[g, t, j] *= inv
    return out


@njit(cache=True)
def _softmax_bwd_nb(p, g):
    G, T, M = p.shape
    out = np.empty_like(p)
    for a in range(G):
        for t in range(T):
            inner = 0.0
            for j in range(M):
                inner += g[a, t, j] * p[a, t, j]
            for j in range(M):
                out[a, t, j] = p[a, t, j] * (g[a, t, j] - inner)
    return out


@njit(cache=True)
def _layernorm_nb(x, gain, bias, eps):
    R, D = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(R, dtype=x.dtype)
    for r in range(R):
        mu = 0.0
        for j in range(D):
            mu += x[r, j]
        mu /= D
        var = 0.0
        for j in range(D):
            c = x[r, j] - mu
            var += c * c
        var /= D
        rs = 1.0 / np.sqrt(var + eps)
        rstd[r] = rs
        for j in range(D):
            h = (x[r, j] - mu) * rs
            xhat[r, j] = h
            y[r, j] = h * gain[j] + bias[j]
    return y, xhat, rstd


@njit(cache=True)
def _layernorm_bwd_nb(g, xhat, rstd, gain):
    R, D = g.shape
    dx = np.empty_like(g)
    dgain = np.zeros(D, dtype=g.dtype)
    dbias = np.zeros(D, dtype=g.dtype)
    for r in range(R):
        s1 = 0.0
        s2 = 0.0
        for j in range(D):
            gx = g[r, j] * gain[j]
            s1 += gx
            s2 += gx * xhat[r, j]
            dgain[j] += g[r, j] * xhat[r, j]
            dbias[j] += g[r, j]
        scale = rstd[r] / D
        for j in range(D):
            gx = g[r, j] * gain[j]
            dx[r, j] = scale * (D * gx - s1 - xhat[r, j] * s2)
    return dx, dgain, dbias


@njit(cache=True)
def _sparse_ce_nb(logits, targets):
    N, V = logits.shape
    losses = np.empty(N, dtype=logits.dtype)
    grad = np.empty_like(logits)
    for i in range(N):
        mx = logits[i, 0]
        for j in range(1, V):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        for j in range(V):
            e = np.exp(logits[i, j] - mx)
            grad[i, j] = e
            s += e
        losses[i] = np.log(s) - (logits[i, targets[i]] - mx)
        scale = grad.dtype.type(1.0 / (s * N))
        for j in range(V):
            grad[i, j] *= scale
        grad[i, targets[i]] -= grad.dtype.type(1.0 / N)
    return losses, grad


@njit(cache=True)
def _midrank_nb(x):
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        mid = (i + j + 2) / 2.0
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    return ranks


@njit(cache=True)
def _signed_rank_counts_nb(doubled):
    total = 0
    for r in doubled:
        total += r
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    reach = 0
    for r in doubled:
        for s in range(reach, -1, -1):
            counts[s + r] += counts[s]
        reach += r
    return counts


# --------------------------------------------------------------------------
# dispatch

_IMPLS = {
    "numpy": {
        "softmax": _softmax_np,
        "softmax_bwd": _softmax_bwd_np,
        "layernorm": _layernorm_np,
        "layernorm_bwd": _layernorm_bwd_np,
        "sparse_ce": _sparse_ce_np,
        "midrank": _midrank_np,
        "signed_rank_counts": _signed_rank_counts_np,
    },
    "numba": {
        "softmax": _softmax_nb,
        "softmax_bwd": _softmax_bwd_nb,
        "layernorm": _layernorm_nb,
        "layernorm_bwd": _layernorm_bwd_nb,
        "sparse_ce": _sparse_ce_nb,
        "midrank": _midrank_nb,
        "signed_rank_counts": _signed_rank_counts_nb,
    },
}

_backend = "numba" if _accel.USE_NUMBA else "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select ``"numpy"`` or ``"numba"``; returns the previous backend."""
    global _backend
    if name not in _IMPLS:
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not _accel.HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def impl(name: str, which: str | None = None):
    return _IMPLS[which or _backend][name]


def masked_softmax(x: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Softmax over the last axis of ``x`` (G, T, M) restricted to ``allowed`` (T, M).

    Rows with no allowed entry come out as all zeros.
    """
    return impl("softmax")(np.ascontiguousarray(x), np.ascontiguousarray(allowed))


def masked_softmax_backward(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    return impl("softmax_bwd")(np.ascontiguousarray(p), np.ascontiguousarray(g))


def layernorm(x2d, gain, bias, eps):
    return impl("layernorm")(np.ascontiguousarray(x2d), gain, bias, x2d.dtype.type(eps))


def layernorm_backward(g2d, xhat, rstd, gain):
    return impl("layernorm_bwd")(np.ascontiguousarray(g2d), xhat, rstd, gain)


def sparse_ce(logits, targets):
    """Per-row losses and the gradient of their *mean* wrt ``logits``."""
    return impl("sparse_ce")(np.ascontiguousarray(logits), np.ascontiguousarray(targets, dtype=np.int64))


def midrank(x) -> np.ndarray:
    return impl("midrank")(np.ascontiguousarray(x, dtype=np.float64))


def signed_rank_counts(doubled_ranks) -> np.ndarray:
    """Null counts of the doubled positive-rank sum over all 2**n sign patterns."""
    return impl("signed_rank_counts")(np.ascontiguousarray(doubled_ranks, dtype=np.int64))
