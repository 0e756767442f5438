"""Reverse-mode automatic differentiation over dense 2-D float64 tensors.

Define-by-run: ops executed inside a `with Graph() as g:` block are recorded
on the tape in insertion order; `g.backward(loss)` replays the tape in exact
reverse insertion order, accumulating gradients into `.grad` slots. Ops
executed with no open graph run forward-only (evaluation mode).

Gradients are summed into `.grad`; callers zero them explicitly per batch
(see zero_grads). Leaves with requires_grad=False never receive a gradient.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError, StateError


class Tensor:
    """Dense 2-D float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_LOCAL = threading.local()


def _stack() -> list["Graph"]:
    # per-thread stack so parallel client updates don't share a tape
    if not hasattr(_LOCAL, "stack"):
        _LOCAL.stack = []
    return _LOCAL.stack


def _active() -> "Graph | None":
    stack = _stack()
    return stack[-1] if stack else None


class Graph:
    """Tape of op records; topological order equals insertion order."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._produced: set[int] = set()
        self._done = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False

    def record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]):
        self._nodes.append((out, backward_fn))
        self._produced.add(id(out))

    def accumulate(self, t: Tensor, delta: np.ndarray):
        """Add `delta` to t.grad unless t is a frozen leaf."""
        if id(t) not in self._produced and not t.requires_grad:
            return
        if t.grad is None:
            t.grad = delta.copy()
        else:
            t.grad += delta

    def backward(self, loss: Tensor):
        if self._done:
            raise StateError("backward already ran on this graph; rebuild it")
        if not self._nodes:
            raise StateError("backward before any recorded forward op")
        if id(loss) not in self._produced:
            raise StateError("loss tensor was not produced by this graph")
        if loss.data.shape != (1, 1):
            raise ShapeError(f"loss must be scalar (1x1), got {loss.data.shape}")
        self._done = True
        loss.grad = np.ones((1, 1))
        for out, backward_fn in reversed(self._nodes):
            if out.grad is not None:
                backward_fn(out.grad)


def zero_grads(tensors: Sequence[Tensor]):
    for t in tensors:
        t.zero_grad()


def _emit(out_data: np.ndarray, backward_fn) -> Tensor:
    out = Tensor(out_data)
    g = _active()
    if g is not None:
        g.record(out, lambda grad_out, fn=backward_fn, graph=g: fn(graph, grad_out))
    return out


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.data.shape} x {b.data.shape}")

    def backward(g, grad_out):
        g.accumulate(a, grad_out @ b.data.T)
        g.accumulate(b, a.data.T @ grad_out)

    return _emit(a.data @ b.data, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a (1, n) row broadcast over a's rows."""
    if a.data.shape != b.data.shape and not (
        b.data.shape == (1, a.data.shape[1])
    ):
        raise ShapeError(f"add shapes disagree: {a.data.shape} + {b.data.shape}")
    row_broadcast = b.data.shape != a.data.shape

    def backward(g, grad_out):
        g.accumulate(a, grad_out)
        if row_broadcast:
            g.accumulate(b, grad_out.sum(axis=0, keepdims=True))
        else:
            g.accumulate(b, grad_out)

    return _emit(a.data + b.data, backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g, grad_out):
        g.accumulate(a, grad_out * c)

    return _emit(a.data * c, backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g, grad_out):
        g.accumulate(a, grad_out * mask)

    return _emit(np.where(mask, a.data, 0.0), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g, grad_out):
        g.accumulate(a, grad_out.T)

    return _emit(a.data.T.copy(), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g, grad_out):
        full = np.zeros_like(a.data)
        full[:, start:stop] = grad_out
        g.accumulate(a, full)

    return _emit(a.data[:, start:stop].copy(), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g, grad_out):
        full = np.zeros_like(a.data)
        full[start:stop, :] = grad_out
        g.accumulate(a, full)

    return _emit(a.data[start:stop, :].copy(), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g, grad_out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            g.accumulate(p, grad_out[:, lo:hi])

    return _emit(np.concatenate([p.data for p in parts], axis=1), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    heights = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + heights)

    def backward(g, grad_out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            g.accumulate(p, grad_out[lo:hi, :])

    return _emit(np.concatenate([p.data for p in parts], axis=0), backward)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise DataError(f"row index out of range for table of {table.data.shape[0]} rows")

    def backward(g, grad_out):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, grad_out)
        g.accumulate(table, full)

    return _emit(table.data[idx, :].copy(), backward)


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g, grad_out):
        dot = (grad_out * s).sum(axis=1, keepdims=True)
        g.accumulate(x, s * (grad_out - dot))

    return _emit(s, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization, then affine by gamma/beta rows of width d."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    d = x.data.shape[1]
    if gamma.data.shape != (1, d) or beta.data.shape != (1, d):
        raise ShapeError(
            f"layer_norm affine shapes must be (1, {d}), got {gamma.data.shape} and {beta.data.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g, grad_out):
        g.accumulate(gamma, (grad_out * xhat).sum(axis=0, keepdims=True))
        g.accumulate(beta, grad_out.sum(axis=0, keepdims=True))
        dxhat = grad_out * gamma.data
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        g.accumulate(x, (dxhat - m1 - xhat * m2) * inv)

    return _emit(gamma.data * xhat + beta.data, backward)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean softmax cross-entropy; backward emits (softmax - onehot) / batch."""
    n, c = logits.data.shape
    idx = np.asarray(labels, dtype=np.intp)
    if idx.shape != (n,):
        raise ShapeError(f"expected {n} labels, got {idx.shape}")
    bad = np.nonzero((idx < 0) | (idx >= c))[0]
    if bad.size:
        raise DataError(f"label out of range [0, {c}) at record {int(bad[0])}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), idx].mean()

    def backward(g, grad_out):
        probs = np.exp(logp)
        probs[np.arange(n), idx] -= 1.0
        g.accumulate(logits, grad_out[0, 0] * probs / n)

    return _emit(np.array([[loss]]), backward)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Central-difference check of f's gradient w.r.t. params.

    f rebuilds the forward pass from current param values and returns the
    scalar loss tensor. Returns the max relative error over all coordinates,
    with denominator max(|analytic|, |numeric|, 1e-8).
    """
    if not 0 < eps <= 1e-2:
        raise ConfigError(f"grad_check eps must be in (0, 1e-2], got {eps}")
    zero_grads(params)
    with Graph() as g:
        loss = f()
    g.backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    max_err = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lo_hi = f().data[0, 0]
            flat[i] = orig - eps
            lo_lo = f().data[0, 0]
            flat[i] = orig
            num = (lo_hi - lo_lo) / (2.0 * eps)
            a = ana.ravel()[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            max_err = max(max_err, err)
    return max_err
