"""Dense tensor arithmetic with reverse-mode differentiation.

A Tensor wraps a float64 ndarray plus an optional gradient buffer. Ops
record a tape (parents + backward closure) when gradients are enabled
and any operand requires them. Every primitive checks its output for
non-finite values and raises NumericOverflowError naming itself.

Compute dtype is float64 throughout so that central finite differences
at h=1e-4 resolve gradients to well below 1e-4 relative error; the
float32 representation required on disk is applied at serialization
time only (see encoder checkpoints).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericOverflowError
from .rng import Rng

_GRAD_ENABLED = True

GELU_C = math.sqrt(2.0 / math.pi)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(primitive: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError(primitive)


class Tensor:
    """Node in the computation graph; immutable data once created."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode pass from a scalar output; accumulates into .grad.

        The tape is consumed: intermediate nodes drop their parents,
        closures and gradients as soon as they have been processed, so
        peak memory stays near the forward graph's size and the graph
        cannot linger after the step.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
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
                node._backward(node, node.grad)
            if node._parents:
                node._parents = ()
                node._backward = None
                if node is not self:
                    node.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(node: Tensor, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = g
    else:
        node.grad = node.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(primitive: str, data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[Tensor, np.ndarray], None] | None) -> Tensor:
    _check_finite(primitive, data)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward          # called as backward(out, g); no cycle
    return out


# -- elementwise primitives ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(out, g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(out, g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _make("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(out, g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make("mul", a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(out, g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make("div", a.data / b.data, (a, b), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def bwd(out, g):
        _accumulate(a, g * out.data)

    return _make("exp", y, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bwd(out, g):
        _accumulate(a, g / a.data)

    return _make("log", np.log(a.data), (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def bwd(out, g):
        _accumulate(a, g * 0.5 / out.data)

    return _make("sqrt", y, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bwd(out, g):
        _accumulate(a, g * (1.0 - out.data * out.data))

    return _make("tanh", y, (a,), bwd)


def gelu(a) -> Tensor:
    """Tanh-approximate gelu: 0.5x(1 + tanh(c(x + 0.044715 x^3)))."""
    a = as_tensor(a)
    x = a.data
    inner = GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def bwd(out, g):
        dinner = GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        _accumulate(a, g * dy)

    return _make("gelu", y, (a,), bwd)


# -- shape and reduction primitives -------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def bwd(out, g):
        _accumulate(a, g.reshape(a.shape))

    return _make("reshape", a.data.reshape(shape), (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)

    def bwd(out, g):
        _accumulate(a, g.transpose(inv))

    return _make("transpose", a.data.transpose(axes), (a,), bwd)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bwd(out, g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.shape).copy())

    return _make("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]

    def bwd(out, g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / n, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg / n, a.shape).copy())

    return _make("mean", a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def matmul(a, b) -> Tensor:
    """np.matmul semantics; leading batch dims must match or broadcast."""
    a, b = as_tensor(a), as_tensor(b)

    def bwd(out, g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _make("matmul", np.matmul(a.data, b.data), (a, b), bwd)


# -- neural-net primitives -----------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    """Shift-invariant softmax along `axis`; outputs sum to 1 per slice."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(out, g):
        dot = (g * out.data).sum(axis=axis, keepdims=True)
        _accumulate(a, out.data * (g - dot))

    return _make("softmax", y, (a,), bwd)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gamma.data * xhat + beta.data
    n = x.shape[-1]

    def bwd(out, g):
        if gamma.requires_grad:
            _accumulate(gamma, _unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            _accumulate(beta, _unbroadcast(g, beta.shape))
        if a.requires_grad:
            dxhat = g * gamma.data
            dx = inv * (dxhat
                        - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            _accumulate(a, dx)

    return _make("layer_norm", y, (a, gamma, beta), bwd)


def dropout(a, p: float, rng: Rng, train: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    The mask is drawn from the passed rng at call time; train=False or
    p=0 is the identity. In train mode the mask is fixed on the tape, so
    gradients treat it as a constant.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    a = as_tensor(a)
    if not train or p == 0.0:
        return a
    mask = rng.keep_mask(a.shape, p).astype(np.float64) / (1.0 - p)

    def bwd(out, g):
        _accumulate(a, g * mask)

    return _make("dropout", a.data * mask, (a,), bwd)


def embedding(weight, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = weight[ids[...], :]."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)

    def bwd(out, g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.data.shape[-1]))
        _accumulate(weight, gw)

    return _make("embedding", weight.data[ids], (weight,), bwd)


# -- composites ----------------------------------------------------------------

def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp; the shift is detached, which leaves gradients exact."""
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    s = log(tsum(exp(sub(a, Tensor(shift))), axis=axis, keepdims=True))
    out = add(s, Tensor(shift))
    if not keepdims:
        out = reshape(out, tuple(n for i, n in enumerate(out.shape) if i != (axis % out.ndim)))
    return out


def gradient(objective: Callable[[], Tensor],
             params: Iterable[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Value and gradients of a scalar objective w.r.t. parameter tensors.

    The objective must be composed of the documented primitives. Returns
    (objective value, [grad per param]); params not reached by the graph
    get zero gradients. Non-finite gradients raise NumericOverflowError.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = objective()
    out.backward()
    grads = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        _check_finite("gradient", g)
        grads.append(g)
    return float(out.data), grads
