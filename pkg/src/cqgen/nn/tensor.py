"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is taped implicitly: every op closes over its inputs and stores a
backward closure on the output node. ``backward()`` on a scalar runs the tape
in reverse topological order. All data lives in numpy float64 arrays; numpy
is used purely as array storage + BLAS, the differentiation itself is here.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .rng import Rng


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


# Grad recording is thread-local: concurrent inference threads toggling
# no_grad() must not see each other's state.
_STATE = threading.local()
# Forward-value finiteness is an invariant; the check is cheap relative to
# the matmuls it guards and catches divergence at the op that produced it.
_CHECK_FINITE = True


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape) -> "Tensor":
        return Tensor(np.zeros(shape))

    @staticmethod
    def constant(data) -> "Tensor":
        return Tensor(data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # -- autograd -------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced in forward op")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def bw():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    out = _make(out_data, (a, b), bw)
    return out


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def bw():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.data.shape))

    out = _make(out_data, (a, b), bw)
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def bw():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    out = _make(out_data, (a, b), bw)
    return out


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data / b.data

    def bw():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))

    out = _make(out_data, (a, b), bw)
    return out


def neg(a) -> Tensor:
    a = _wrap(a)

    def bw():
        if a.requires_grad:
            a._accumulate(-out.grad)

    out = _make(-a.data, (a,), bw)
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)

    def bw():
        if a.requires_grad:
            a._accumulate(out.grad * (1.0 - y * y))

    out = _make(y, (a,), bw)
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    y = _sigmoid_np(a.data)

    def bw():
        if a.requires_grad:
            a._accumulate(out.grad * y * (1.0 - y))

    out = _make(y, (a,), bw)
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- matmul / shaping ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bw():
        g = out.grad
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    out = _make(out_data, (a, b), bw)
    return out


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out_data = a.data.reshape(shape)

    def bw():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.data.shape))

    out = _make(out_data, (a,), bw)
    return out


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bw():
        if a.requires_grad:
            a._accumulate(np.transpose(out.grad, inv))

    out = _make(out_data, (a,), bw)
    return out


def slice_(a, key) -> Tensor:
    a = _wrap(a)
    out_data = a.data[key]

    def bw():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, key, out.grad)
            a._accumulate(g)

    out = _make(np.ascontiguousarray(out_data), (a,), bw)
    return out


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of empty list")
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw():
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out_data.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(out.grad[tuple(idx)])

    out = _make(out_data, ts, bw)
    return out


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    return concat([reshape(t, t.data.shape[:axis] + (1,) + t.data.shape[axis:]) for t in ts], axis=axis)


# -- reductions ------------------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    out = _make(out_data, (a,), bw)
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- softmax family ----------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw():
        if a.requires_grad:
            g = out.grad
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - dot))

    out = _make(y, (a,), bw)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    logp = shifted - lse
    y = np.exp(logp)

    def bw():
        if a.requires_grad:
            g = out.grad
            a._accumulate(g - y * g.sum(axis=axis, keepdims=True))

    out = _make(logp, (a,), bw)
    return out


# -- lookup / dropout -----------------------------------------------------------------


def embedding_lookup(table, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` (V, d) by integer array `ids` (any shape)."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(f"embedding ids out of range for table {table.data.shape}")
    out_data = table.data[ids]

    def bw():
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            table._accumulate(g)

    out = _make(out_data, (table,), bw)
    return out


def dropout(a, rate: float, rng: Rng | None = None, train: bool = False) -> Tensor:
    """Inverted dropout: keeps are scaled by 1/(1-rate); identity in eval mode."""
    a = _wrap(a)
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def bw():
        if a.requires_grad:
            a._accumulate(out.grad * keep)

    out = _make(a.data * keep, (a,), bw)
    return out


# -- convolution / pooling ---------------------------------------------------------


def conv1d_valid(x, filters) -> Tensor:
    """Valid 1-D convolution over time.

    x: (B, T, d), filters: (w, d, F) -> (B, T - w + 1, F).
    Composed from slice/matmul/add so the backward pass comes for free.
    """
    x, filters = _wrap(x), _wrap(filters)
    if x.data.ndim != 3 or filters.data.ndim != 3:
        raise ShapeError(f"conv1d_valid wants (B,T,d) and (w,d,F), got {x.data.shape} and {filters.data.shape}")
    w = filters.data.shape[0]
    T = x.data.shape[1]
    if x.data.shape[2] != filters.data.shape[1]:
        raise ShapeError(f"conv1d_valid channel mismatch: {x.data.shape} vs {filters.data.shape}")
    if T < w:
        raise ShapeError(f"conv1d_valid input time {T} shorter than filter width {w}")
    out = None
    for i in range(w):
        term = matmul(slice_(x, (slice(None), slice(i, T - w + 1 + i), slice(None))), slice_(filters, i))
        out = term if out is None else add(out, term)
    return out


def max_over_time(x, valid_counts: np.ndarray | None = None) -> Tensor:
    """Max over axis 1 of (B, T, F); positions >= valid_counts[b] are ignored."""
    x = _wrap(x)
    if x.data.ndim != 3:
        raise ShapeError(f"max_over_time wants (B,T,F), got {x.data.shape}")
    data = x.data
    if valid_counts is not None:
        mask = np.arange(data.shape[1])[None, :, None] < np.asarray(valid_counts)[:, None, None]
        data = np.where(mask, data, -np.inf)
    arg = data.argmax(axis=1)  # (B, F)
    b_idx = np.arange(data.shape[0])[:, None]
    f_idx = np.arange(data.shape[2])[None, :]
    out_data = x.data[b_idx, arg, f_idx]

    def bw():
        if x.requires_grad:
            g = np.zeros_like(x.data)
            np.add.at(g, (b_idx, arg, f_idx), out.grad)
            x._accumulate(g)

    out = _make(out_data, (x,), bw)
    return out


# -- losses -----------------------------------------------------------------------


def cross_entropy(logits, target_ids: np.ndarray) -> Tensor:
    """Per-row negative log-likelihood: logits (B, V), target_ids (B,) -> (B,)."""
    logits = _wrap(logits)
    t = np.atleast_1d(np.asarray(target_ids, dtype=np.int64))
    if logits.data.ndim != 2 or t.shape[0] != logits.data.shape[0]:
        raise ShapeError(f"cross_entropy wants (B,V) logits and (B,) targets, got {logits.data.shape} and {t.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(t.shape[0])
    out_data = -logp[rows, t]

    def bw():
        if logits.requires_grad:
            p = np.exp(logp)
            p[rows, t] -= 1.0
            logits._accumulate(p * out.grad[:, None])

    out = _make(out_data, (logits,), bw)
    return out


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross entropy with a numerically stable logit formulation."""
    logits = _wrap(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ShapeError(f"bce_with_logits shape mismatch: logits {logits.data.shape} vs targets {t.shape}")
    x = logits.data
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out_data = np.array(loss.mean())
    n = x.size

    def bw():
        if logits.requires_grad:
            logits._accumulate((_sigmoid_np(x) - t) * (out.grad / n))

    out = _make(out_data, (logits,), bw)
    return out


def positive_only_bce(logits, targets) -> Tensor:
    """Only the positive term -t*log(sigmoid(x)), averaged like bce_with_logits."""
    logits = _wrap(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ShapeError(f"positive_only_bce shape mismatch: logits {logits.data.shape} vs targets {t.shape}")
    x = logits.data
    # -log sigmoid(x) = max(-x, 0) + log1p(exp(-|x|))
    loss = t * (np.maximum(-x, 0.0) + np.log1p(np.exp(-np.abs(x))))
    out_data = np.array(loss.mean())
    n = x.size

    def bw():
        if logits.requires_grad:
            logits._accumulate(t * (_sigmoid_np(x) - 1.0) * (out.grad / n))

    out = _make(out_data, (logits,), bw)
    return out
