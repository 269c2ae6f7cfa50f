"""Reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps an ndarray and remembers how it was produced; calling
``backward`` on a scalar walks the graph in reverse topological order
and accumulates gradients into every tensor that requires them.  Only
the operations this package's networks need are implemented, several as
fused primitives (linear, layer_norm, softmax, logsumexp) so the graphs
stay small and the hot path stays inside numpy.

Gradient recording can be switched off with ``no_grad()`` for cheap
inference.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the with-block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """An ndarray plus the tape entry that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # keep numpy from absorbing us into ufuncs; reflected operators run instead
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants stay plain numpy and do not enter the graph
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

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; use reciprocal ops")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Raises ValueError if any accumulated leaf gradient is non-finite,
        so diverging training fails loudly instead of silently poisoning
        the parameters.
        """
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for t in order:
            if t._backward is not None:
                t._backward(t.grad)
            if t._parents:
                # free interior gradients as soon as they are consumed
                t.grad = None
        for t in order:
            if t.grad is not None and not np.isfinite(t.grad).all():
                raise ValueError("non-finite gradient detected during backward")


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order from root, iterative to spare the stack."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g.flags.writeable is False else g
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(out_data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------- arithmetic


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        out_data = a.data + b.data

        def backward(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                gb = _unbroadcast(g, b.data.shape)
                if gb is g and a.requires_grad:
                    # never hand the same buffer to two parents: a later
                    # in-place accumulation would corrupt the other one
                    gb = g.copy()
                _accumulate(b, gb)

        return _make(out_data, (a, b), backward)

    b_arr = np.asarray(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))

    return _make(a.data + b_arr, (a,), backward)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        out_data = a.data - b.data

        def backward(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(-g, b.data.shape))

        return _make(out_data, (a, b), backward)

    b_arr = np.asarray(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))

    return _make(a.data - b_arr, (a,), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        out_data = a.data * b.data

        def backward(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

        return _make(out_data, (a, b), backward)

    b_arr = np.asarray(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b_arr, a.data.shape))

    return _make(a.data * b_arr, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def backward(g):
        _accumulate(a, g * (a.data > 0))

    return _make(out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


# --------------------------------------------------------------- contraction


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b where b is a 2D weight or has the same batch shape as a."""
    out_data = a.data @ b.data

    if b.data.ndim == 2:

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                k = a.data.shape[-1]
                n = g.shape[-1]
                _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))

    else:
        if a.data.ndim != b.data.ndim:
            raise ValueError("batched matmul requires matching batch ranks")

        def backward(g):
            if a.requires_grad:
                _accumulate(a, g @ b.data.swapaxes(-1, -2))
            if b.requires_grad:
                _accumulate(b, a.data.swapaxes(-1, -2) @ g)

    return _make(out_data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fused affine map on the last axis: x @ w + b."""
    out_data = x.data @ w.data
    if b is not None:
        out_data += b.data

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data.T)
        if w.requires_grad:
            k = x.data.shape[-1]
            n = g.shape[-1]
            _accumulate(w, x.data.reshape(-1, k).T @ g.reshape(-1, n))
        if b is not None and b.requires_grad:
            _accumulate(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_data, parents, backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)]
    )
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape) / n)

    return _make(out_data, (a,), backward)


def tmax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the subgradient flows to the first argmax.

    The argmax is only computed inside backward, so inference passes
    pay for the max alone.
    """
    out_data = a.data.max(axis=axis, keepdims=keepdims)

    def backward(g):
        arg = np.argmax(a.data, axis=axis)
        if not keepdims:
            g = np.expand_dims(g, axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(arg, axis), g, axis=axis)
        _accumulate(a, buf)

    return _make(out_data, (a,), backward)


# ------------------------------------------------------------------- shaping


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward)


def getitem(a: Tensor, key) -> Tensor:
    """Basic slicing only: slices select disjoint elements, so += is exact."""

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[key] += g
        _accumulate(a, buf)

    return _make(a.data[key], (a,), backward)


def concat(parts: list[Tensor], axis: int) -> Tensor:
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accumulate(p, g[tuple(sl)])

    return _make(out_data, tuple(parts), backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    out_data = np.broadcast_to(a.data, shape)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))

    return _make(out_data.copy(), (a,), backward)


# ------------------------------------------------------------- fused blocks


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).reshape(-1, g.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            _accumulate(beta, g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            n = x.data.shape[-1]
            gh = g * gamma.data
            term = gh.sum(axis=-1, keepdims=True) + xhat * (gh * xhat).sum(
                axis=-1, keepdims=True
            )
            _accumulate(x, inv * (gh - term / n))

    return _make(out_data, (x, gamma, beta), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    # saturated logits land exp() in the subnormal range, which is very
    # slow on common CPUs; flushing to zero moves a probability by less
    # than float eps
    e[e < np.finfo(e.dtype).tiny] = 0.0
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, out_data * (g - dot))

    return _make(out_data, (x,), backward)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    e[e < np.finfo(e.dtype).tiny] = 0.0  # see softmax
    s = e.sum(axis=axis, keepdims=True)
    out_data = m + np.log(s)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, g * (e / s))

    return _make(out_data, (x,), backward)
