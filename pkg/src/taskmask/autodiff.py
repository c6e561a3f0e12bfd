"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Ops run eagerly on numpy. While a GradTape is active, each primitive appends
a record (output, inputs, backward closure) to the tape; the append order is
the forward execution order, so walking the tape backwards is a valid reverse
topological order. Without an active tape the same functions are plain numpy
with Tensor wrappers, which is the inference fast path.

Training runs in float32; the gradient test suite runs everything in float64.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

_EPS = 1e-12


class Tensor:
    """Dense n-d array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # light operator sugar; every path below still goes through the recorded primitives
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


_ACTIVE_TAPE: "GradTape | None" = None


class GradTape:
    """Records primitive applications for one forward pass.

    Use as a context manager around the forward computation, then call
    backward(loss) exactly once; a second call without a fresh forward pass
    is an error because intermediate references are released.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._consumed = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a GradTape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss: Tensor) -> dict:
        if self._consumed:
            raise RuntimeError("backward already called on this tape; re-run the forward pass")
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        self._consumed = True
        leaves = {}
        for rec in self._records:
            for inp in rec.inputs:
                if isinstance(inp, Tensor) and inp.requires_grad:
                    leaves[id(inp)] = inp
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self._records):
            g_out = grads.pop(id(rec.output), None)
            if g_out is None:
                continue
            for inp, g_in in zip(rec.inputs, rec.backward(g_out)):
                if g_in is None or not isinstance(inp, Tensor):
                    continue
                prev = grads.get(id(inp))
                grads[id(inp)] = g_in if prev is None else prev + g_in
            del rec.inputs, rec.output  # allow references to drop as we go
        result = {}
        for leaf in leaves.values():
            g = grads.get(id(leaf))
            if g is not None:
                leaf.grad = g if leaf.grad is None else leaf.grad + g
                result[leaf] = leaf.grad
        self._records.clear()
        return result


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(output: Tensor, inputs, backward) -> Tensor:
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._records.append(_Record(output, inputs, backward))
    return output


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_matmul_shapes(a: np.ndarray, b: np.ndarray):
    if a.ndim > 2 or b.ndim > 2 or a.ndim == 0 or b.ndim == 0:
        raise ValueError(f"matmul supports 1-D/2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != (b.shape[0] if b.ndim >= 1 else None):
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")


def matmul(a, b, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    A = a.data.T if transpose_a else a.data
    B = b.data.T if transpose_b else b.data
    _check_matmul_shapes(A, B)
    out = Tensor(A @ B)

    def backward(g):
        # promote everything to 2-D so one set of formulas covers the vector cases
        A2 = A.reshape(1, -1) if A.ndim == 1 else A
        B2 = B.reshape(-1, 1) if B.ndim == 1 else B
        g2 = g.reshape(A2.shape[0], B2.shape[1])
        ga = g2 @ B2.T
        gb = A2.T @ g2
        if A.ndim == 1:
            ga = ga.reshape(A.shape)
        if B.ndim == 1:
            gb = gb.reshape(B.shape)
        if transpose_a:
            ga = ga.T
        if transpose_b:
            gb = gb.T
        return (ga, gb)

    return _emit(out, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _emit(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def backward(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _emit(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape))

    return _emit(out, (a, b), backward)


def maximum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(np.maximum(a.data, b.data))

    def backward(g):
        # ties route their subgradient to the first operand
        take_a = a.data >= b.data
        return (_unbroadcast(g * take_a, a.data.shape),
                _unbroadcast(g * ~take_a, b.data.shape))

    return _emit(out, (a, b), backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0))

    def backward(g):
        return (g * (x.data > 0),)

    return _emit(out, (x,), backward)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(expit(x.data))

    def backward(g):
        return (g * out.data * (1.0 - out.data),)

    return _emit(out, (x,), backward)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.exp(x.data))

    def backward(g):
        return (g * out.data,)

    return _emit(out, (x,), backward)


def l2_normalize(x, axis: int = -1) -> Tensor:
    """Rows scaled to unit L2 norm: x / (|x| + 1e-12)."""
    x = _as_tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    denom = norm + _EPS
    out = Tensor(x.data / denom)

    def backward(g):
        gdot = np.sum(g * x.data, axis=axis, keepdims=True)
        safe = np.maximum(norm, _EPS)
        return (g / denom - x.data * gdot / (safe * denom * denom),)

    return _emit(out, (x,), backward)


def dot(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError(f"dot expects equal-length vectors, got {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        return (g * b.data, g * a.data)

    return _emit(out, (a, b), backward)


def scale_shift(x, scale, shift) -> Tensor:
    """Elementwise x*scale + shift with numpy broadcasting on both factors."""
    x, scale, shift = _as_tensor(x), _as_tensor(scale), _as_tensor(shift)
    out = Tensor(x.data * scale.data + shift.data)

    def backward(g):
        return (_unbroadcast(g * scale.data, x.data.shape),
                _unbroadcast(g * x.data, scale.data.shape),
                _unbroadcast(g, shift.data.shape))

    return _emit(out, (x, scale, shift), backward)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _emit(out, (x,), backward)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.mean(x.data, axis=axis, keepdims=keepdims))
    count = x.data.size if axis is None else x.data.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape) / count,)

    return _emit(out, (x,), backward)


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = np.exp(x.data - m)
    total = np.sum(shifted, axis=axis, keepdims=True)
    res = np.log(total) + m
    out = Tensor(res if keepdims else np.squeeze(res, axis=axis))
    softmax = shifted / total

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * softmax,)

    return _emit(out, (x,), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer labels under row-wise softmax."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.ndim != 1 or logits.data.shape[0] != labels.shape[0]:
        raise ValueError(
            f"softmax_cross_entropy expects (B,C) logits and (B,) labels, got {logits.data.shape} and {labels.shape}")
    B = logits.data.shape[0]
    m = np.max(logits.data, axis=1, keepdims=True)
    shifted = np.exp(logits.data - m)
    total = shifted.sum(axis=1, keepdims=True)
    log_probs = logits.data - m - np.log(total)
    out = Tensor(-log_probs[np.arange(B), labels].mean())
    softmax = shifted / total

    def backward(g):
        grad = softmax.copy()
        grad[np.arange(B), labels] -= 1.0
        return (grad * (g / B),)

    return _emit(out, (logits,), backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        return (g.reshape(x.data.shape),)

    return _emit(out, (x,), backward)
