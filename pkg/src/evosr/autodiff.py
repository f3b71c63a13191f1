"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is exactly what the data-to-equation network needs: 2-D linear
algebra, 1-D convolution and set-max for the point encoder, gelu/softmax/
dropout, and a fused, PAD-masked cross-entropy. Every forward op checks for
non-finite values so divergence surfaces at the op that produced it, and the
tape is rebuilt per forward pass (no retained graphs).

Tensor.data must never be mutated after construction; training replaces
parameters via sgd_step, which returns fresh tensors.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError):
    pass


class NonFiniteValue(AutodiffError):
    """A forward op produced inf or nan."""


class NonFiniteGradient(AutodiffError):
    """Backward accumulated inf or nan; training has diverged."""


class IndexOutOfVocab(AutodiffError):
    pass


_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape construction (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Immutable-by-convention array node; may carry a backward closure."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward_fn = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return self.data.reshape(()).item()

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"


def _finite_or_raise(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{op} produced non-finite values")


def _make(data: np.ndarray, op: str, parents: tuple, backward_fn) -> Tensor:
    _finite_or_raise(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
        out.op = op
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, "matmul", (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may also be 1-D and broadcast over a's rows (bias)."""
    bias_like = b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]
    if not bias_like and a.shape != b.shape:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0) if bias_like else g)

    return _make(data, "add", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}")
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(data, "mul", (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * s

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _make(data, "scale", (a,), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose expects 2-D, got {a.shape}")
    data = a.data.T.copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(data, "transpose", (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeMismatch(f"reshape {a.shape} -> {shape}")
    data = a.data.reshape(shape).copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(data, "reshape", (a,), backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _make(data, "concat", tuple(parts), backward)


def slice_tensor(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.data.shape[axis]):
        raise ShapeMismatch(f"slice [{start}:{stop}] on axis {axis} of {a.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = a.data[idx].copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    return _make(data, "slice", (a,), backward)


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row gather (embedding lookup); gradient scatter-adds into the table."""
    ids = np.asarray(list(ids), dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeMismatch(f"take_rows expects 2-D table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexOutOfVocab(f"row ids outside [0, {table.shape[0]})")
    data = table.data[ids].copy()

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            table._accumulate(full)

    return _make(data, "take_rows", (table,), backward)


def conv1d(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Valid cross-correlation over the point axis.

    x: (C_in, L), w: (C_out, C_in, K), bias: (C_out,) -> (C_out, L-K+1).
    """
    if x.data.ndim != 2 or w.data.ndim != 3 or bias.data.ndim != 1:
        raise ShapeMismatch(f"conv1d ranks x={x.shape} w={w.shape} b={bias.shape}")
    c_in, length = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w or bias.shape[0] != c_out or k > length:
        raise ShapeMismatch(f"conv1d x={x.shape} w={w.shape} b={bias.shape}")
    l_out = length - k + 1
    data = np.zeros((c_out, l_out))
    for j in range(k):
        data += w.data[:, :, j] @ x.data[:, j:j + l_out]
    data += bias.data[:, None]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for j in range(k):
                gx[:, j:j + l_out] += w.data[:, :, j].T @ g
            x._accumulate(gx)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for j in range(k):
                gw[:, :, j] = g @ x.data[:, j:j + l_out].T
            w._accumulate(gw)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=1))

    return _make(data, "conv1d", (x, w, bias), backward)


def max_over_set(x: Tensor) -> Tensor:
    """Reduce (C, L) -> (C,) by max over the set axis; ties route gradient
    to the first maximal position."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"max_over_set expects 2-D, got {x.shape}")
    idx = np.argmax(x.data, axis=1)
    data = x.data[np.arange(x.shape[0]), idx].copy()

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[np.arange(x.data.shape[0]), idx] = g
            x._accumulate(gx)

    return _make(data, "max_over_set", (x,), backward)


_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation gelu (fixed formula for bit stability)."""
    xv = x.data
    inner = _GELU_K * (xv + _GELU_C * xv ** 3)
    t = np.tanh(inner)
    data = 0.5 * xv * (1.0 + t)

    def backward(g):
        if x.requires_grad:
            d_inner = _GELU_K * (1.0 + 3.0 * _GELU_C * xv ** 2)
            dx = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t ** 2) * d_inner
            x._accumulate(g * dx)

    return _make(data, "gelu", (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            x._accumulate(data * (g - inner))

    return _make(data, "softmax", (x,), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    data = x.data * mask

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(data, "dropout", (x,), backward)


def cross_entropy_loss(logits: Tensor, targets: Sequence[int], pad_id: int | None = 0) -> Tensor:
    """Mean of -log softmax(logits)[target] over non-PAD positions.

    Fused and numerically stable; returns a scalar tensor.
    """
    ids = np.asarray(list(targets), dtype=np.int64)
    if logits.data.ndim != 2 or ids.shape[0] != logits.shape[0]:
        raise ShapeMismatch(f"cross_entropy logits {logits.shape} vs {ids.shape[0]} targets")
    n, c = logits.shape
    if ids.size and (ids.min() < 0 or ids.max() >= c):
        raise IndexOutOfVocab(f"target ids outside [0, {c})")
    keep = np.ones(n, dtype=bool) if pad_id is None else ids != pad_id
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise ValueError("cross_entropy_loss: every position is PAD")
    lv = logits.data
    m = lv.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(lv - m).sum(axis=1))
    per_pos = lse - lv[np.arange(n), ids]
    data = np.array(per_pos[keep].mean())

    def backward(g):
        if logits.requires_grad:
            soft = np.exp(lv - lse[:, None])
            soft[np.arange(n), ids] -= 1.0
            soft[~keep] = 0.0
            logits._accumulate(soft * (float(g) / n_keep))

    return _make(data, "cross_entropy", (logits,), backward)


def backward(loss: Tensor) -> None:
    """Reverse accumulation from a scalar loss over the recorded tape."""
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got {loss.shape}")
    if not loss.requires_grad:
        raise AutodiffError("loss does not require grad (built under no_grad?)")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is None or node.grad is None:
            continue
        if not np.all(np.isfinite(node.grad)):
            raise NonFiniteGradient(f"non-finite gradient at {node.op}")
        node._backward_fn(node.grad)
    for node in topo:
        if node.requires_grad and node.grad is not None and not np.all(np.isfinite(node.grad)):
            raise NonFiniteGradient(f"non-finite gradient at {node.op}")


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Global-norm clipping in place on .grad; returns the pre-clip norm."""
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float((p.grad ** 2).sum())
    norm = math.sqrt(sq)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


def sgd_step(params: Sequence[Tensor], lr: float) -> list[Tensor]:
    """p <- p - lr * grad; returns fresh parameter tensors (grads cleared)."""
    out = []
    for p in params:
        data = p.data if p.grad is None else p.data - lr * p.grad
        _finite_or_raise(data, "sgd_step")
        out.append(Tensor(data.copy(), requires_grad=True))
    return out
