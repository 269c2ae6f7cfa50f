"""Shared test helpers: finite-difference gradients and small builders."""

from __future__ import annotations

import numpy as np

from pointbc import nn

FD_EPS = 1e-5
FD_RTOL = 1e-4


def fd_gradient(fn, buffer: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    fn takes no arguments and must read ``buffer`` live; every entry is
    perturbed in place and restored.
    """
    grad = np.zeros_like(buffer)
    flat = buffer.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn()
        flat[i] = orig - eps
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


# Below this norm a gradient is indistinguishable from central-difference
# roundoff (machine eps / 2*FD_EPS per entry); it only matters for leaves
# whose true gradient is exactly zero, e.g. shift-invariant directions.
FD_ATOL = 1e-7


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = float(np.linalg.norm((a - b).ravel()))
    den = max(float(np.linalg.norm(a.ravel())), float(np.linalg.norm(b.ravel())), 1e-12)
    return num / den


def check_gradients(loss_fn, leaves, rtol: float = FD_RTOL, eps: float = FD_EPS) -> None:
    """Assert backward() matches central differences for every leaf.

    loss_fn() must rebuild the scalar loss from the leaves' live data
    buffers each call; leaves are float64 Tensors with requires_grad.
    """
    for t in leaves:
        assert t.data.dtype == np.float64, "gradient checks run in float64"
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [t.grad.copy() for t in leaves]

    def value() -> float:
        with nn.no_grad():
            return float(loss_fn().data)

    for t, g_ad in zip(leaves, analytic):
        g_fd = fd_gradient(value, t.data, eps)
        num = float(np.linalg.norm((g_ad - g_fd).ravel()))
        den = max(float(np.linalg.norm(g_ad.ravel())), float(np.linalg.norm(g_fd.ravel())))
        assert num <= FD_ATOL + rtol * den, (
            f"gradient mismatch {num / max(den, 1e-12):.3e} on shape {t.data.shape}"
        )


def leaf(rng: np.random.Generator, *shape: int) -> nn.Tensor:
    return nn.Tensor(rng.standard_normal(shape), requires_grad=True)


def spread_leaf(rng: np.random.Generator, *shape: int) -> nn.Tensor:
    """Leaf whose entries are pairwise separated by far more than FD_EPS.

    Needed when the loss takes a max over the data: near-ties flip the
    argmax inside the finite-difference perturbation.
    """
    n = int(np.prod(shape))
    vals = rng.permutation(n) * 0.05 + rng.uniform(-0.01, 0.01, size=n)
    vals = vals - vals.mean()
    return nn.Tensor(vals.reshape(shape), requires_grad=True)
