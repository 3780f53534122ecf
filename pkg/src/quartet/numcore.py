"""Dense arrays with a reverse-mode gradient tape, plus layers, loss and Adam.

Arrays are float32 by default.  Wrap gradient checks in
``with precision("float64"):`` to build every new tensor and parameter in
64-bit.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from quartet import kernels

LAYERNORM_EPS = 1e-5

_DTYPE = np.float32


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the dtype used for new tensors (``float32``/``float64``)."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.dtype(name).type
    try:
        yield
    finally:
        _DTYPE = prev


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class GraphError(RuntimeError):
    pass


class Tensor:
    """An ndarray node in the computation record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.data.dtype})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self):
        return sum_all(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _node(data, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (), _backward=backward if needs else None,
                  dtype=data.dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.data.dtype)

        def backward_c(g):
            a._accum(_unbroadcast(g * c, a.shape))

        return _node(a.data * c, (a,), backward_c)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting of leading dims."""
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                b._accum(a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(out_data, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        a._accum(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        a._accum(np.transpose(g, inv))

    return _node(np.transpose(a.data, axes), (a,), backward)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def backward(g):
        a._accum(g * keep)

    return _node(a.data * keep, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(np.broadcast_to(g, a.shape))

    return _node(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.size

    def backward(g):
        a._accum(np.broadcast_to(g / n, a.shape))

    return _node(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), backward)


def getitem(a: Tensor, key) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        a._accum(full)

    return _node(a.data[key], (a,), backward)


def take_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Embedding lookup ``table[idx]`` for an integer array of any shape."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accum(full)

    return _node(table.data[idx], (table,), backward)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accum(g[tuple(sl)])

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


# --------------------------------------------------------------------------
# layers


def dense(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ W + b`` over the last axis."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} does not match weight {W.shape}")
    y = matmul(x, W)
    return add(y, b) if b is not None else y


def softmax(x: Tensor, axis: int = -1, allowed: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax along ``axis``.

    ``allowed`` is an optional boolean (..., T, M) mask over the last two
    axes; disallowed entries get probability exactly 0 and rows with nothing
    allowed come out as zeros.
    """
    if np.isnan(x.data).any():
        raise NumericError("softmax received NaN input")
    moved = axis not in (-1, x.ndim - 1)
    data = np.moveaxis(x.data, axis, -1) if moved else x.data
    shape = data.shape
    if data.ndim == 1:
        d3 = data.reshape(1, 1, -1)
    else:
        d3 = data.reshape(-1, shape[-2], shape[-1])
    if allowed is None:
        allowed_arr = np.ones(d3.shape[1:], dtype=np.bool_)
    else:
        allowed_arr = np.broadcast_to(np.asarray(allowed, dtype=np.bool_), d3.shape[1:])
    p3 = kernels.masked_softmax(d3, allowed_arr)
    p = p3.reshape(shape)
    out_data = np.moveaxis(p, -1, axis) if moved else p

    def backward(g):
        gm = np.moveaxis(g, axis, -1) if moved else g
        dx = kernels.masked_softmax_backward(p3, gm.reshape(p3.shape)).reshape(shape)
        x._accum(np.moveaxis(dx, -1, axis) if moved else dx)

    return _node(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    d = x.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm needs a last dimension of at least 2")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs features {d}")
    x2 = x.data.reshape(-1, d)
    y, xhat, rstd = kernels.layernorm(x2, gain.data, bias.data, eps)

    def backward(g):
        dx, dg, db = kernels.layernorm_backward(g.reshape(-1, d), xhat, rstd, gain.data)
        if x.requires_grad:
            x._accum(dx.reshape(x.shape))
        if gain.requires_grad:
            gain._accum(dg)
        if bias.requires_grad:
            bias._accum(db)

    return _node(y.reshape(x.shape), (x, gain, bias), backward)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
    return mul(x, keep)


def sparse_ce(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    V = logits.shape[-1]
    flat = logits.data.reshape(-1, V)
    if flat.shape[0] != targets.shape[0]:
        raise ShapeError(f"sparse_ce: {flat.shape[0]} logit rows vs {targets.shape[0]} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise IndexError(f"target id out of range [0, {V})")
    losses, grad = kernels.sparse_ce(flat, targets)
    value = np.asarray(losses.mean(), dtype=logits.data.dtype)

    def backward(g):
        logits._accum((grad * g).reshape(logits.shape))

    return _node(value, (logits,), backward)


# --------------------------------------------------------------------------
# reverse sweep


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key)
        if s == 2:
            continue
        if s == 1:
            raise GraphError("cycle in computation record")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            ps = state.get(id(p))
            if ps == 1:
                raise GraphError("cycle in computation record")
            if ps is None:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf."""
    if root.size != 1:
        raise ShapeError("backward() needs a scalar root")
    order = _topo(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node._parents:
                node.grad = None  # free interior buffers


# --------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: AdamState) -> AdamState:
    """One bias-corrected Adam update in place.

    Entries whose gradient is exactly zero (or missing) keep their value;
    their moments still decay.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"adam: gradient {g.shape} vs parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.lr == 0.0:
            continue
        upd = (state.lr * (m / c1)) / (np.sqrt(v / c2) + state.eps)
        upd = np.where(g != 0, upd, 0.0)
        p.data -= upd.astype(p.data.dtype, copy=False)
    return state


def grads_of(params: dict[str, Tensor]) -> dict[str, np.ndarray | None]:
    return {k: p.grad for k, p in params.items()}


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
