"""Network building blocks on top of the tensor autodiff core.

Every layer registers its parameters in a ParameterStore under a
prefix, so construction order fully determines parameter layout.
Weights use fan-in scaled uniform init, biases start at zero.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .optim import ParameterStore
from .tensor import Tensor


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine map on the last axis."""

    def __init__(self, store: ParameterStore, prefix: str, d_in: int, d_out: int, rng):
        self.w = store.create(f"{prefix}.w", _uniform_init(rng, d_in, (d_in, d_out)))
        self.b = store.create(f"{prefix}.b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)


class LayerNorm:
    def __init__(self, store: ParameterStore, prefix: str, dim: int, eps: float = 1e-5):
        self.gamma = store.create(f"{prefix}.gamma", np.ones(dim))
        self.beta = store.create(f"{prefix}.beta", np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadSelfAttention:
    """Scaled dot-product self-attention over the full sequence.

    No causal or padding mask: every token attends to every token.
    Scores are scaled by 1/sqrt(head_dim).
    """

    def __init__(self, store: ParameterStore, prefix: str, width: int, heads: int, rng):
        if width % heads != 0:
            raise ValueError("width must be divisible by the head count")
        self.heads = heads
        self.head_dim = width // heads
        self.q = Linear(store, f"{prefix}.q", width, width, rng)
        self.k = Linear(store, f"{prefix}.k", width, width, rng)
        self.v = Linear(store, f"{prefix}.v", width, width, rng)
        self.o = Linear(store, f"{prefix}.o", width, width, rng)

    def __call__(self, x: Tensor, return_weights: bool = False):
        b, t, w = x.shape
        h, d = self.heads, self.head_dim

        def split(y: Tensor) -> Tensor:
            return T.transpose(T.reshape(y, (b, t, h, d)), (0, 2, 1, 3))

        q = split(self.q(x))
        k = split(self.k(x))
        v = split(self.v(x))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)  # (b, h, t, d)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, t, w))
        out = self.o(merged)
        if return_weights:
            return out, attn.data
        return out


class FeedForward:
    def __init__(self, store: ParameterStore, prefix: str, width: int, hidden: int, rng):
        self.l1 = Linear(store, f"{prefix}.l1", width, hidden, rng)
        self.l2 = Linear(store, f"{prefix}.l2", hidden, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(T.relu(self.l1(x)))


class TransformerBlock:
    """Post-norm residual block: LN(x + attn(x)), then LN(x + ff(x))."""

    def __init__(self, store: ParameterStore, prefix: str, width: int, heads: int, ff_hidden: int, rng):
        self.attn = MultiHeadSelfAttention(store, f"{prefix}.attn", width, heads, rng)
        self.ln1 = LayerNorm(store, f"{prefix}.ln1", width)
        self.ff = FeedForward(store, f"{prefix}.ff", width, ff_hidden, rng)
        self.ln2 = LayerNorm(store, f"{prefix}.ln2", width)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.ln1(x + self.attn(x))
        return self.ln2(x + self.ff(x))


class TransformerEncoder:
    def __init__(self, store: ParameterStore, prefix: str, width: int, heads: int, ff_hidden: int, depth: int, rng):
        self.blocks = [
            TransformerBlock(store, f"{prefix}.b{i}", width, heads, ff_hidden, rng)
            for i in range(depth)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class PointSetEncoder:
    """Shared per-point MLP followed by a coordinate-wise max pool.

    Input (..., p, 3) center-relative points, output (..., width).  The
    pool makes the encoding exactly invariant to the order of the p
    points: per-point features are identical under permutation and max
    is order-free.
    """

    def __init__(self, store: ParameterStore, prefix: str, width: int, rng):
        self.l1 = Linear(store, f"{prefix}.l1", 3, width, rng)
        self.l2 = Linear(store, f"{prefix}.l2", width, width, rng)

    def __call__(self, points: Tensor) -> Tensor:
        feat = self.l2(T.relu(self.l1(points)))
        return T.tmax(feat, axis=-2)


class MLP:
    """Stack of affine layers with relu between, linear at the end."""

    def __init__(self, store: ParameterStore, prefix: str, dims: list[int], rng):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.layers = [
            Linear(store, f"{prefix}.l{i}", dims[i], dims[i + 1], rng)
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = T.relu(layer(x))
        return self.layers[-1](x)
