"""Parameter registry and the adaptive-moment optimizer used for training."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Named trainable tensors in a stable insertion order.

    The order matters: serialization, optimizer state, and gradient
    clipping all walk parameters in creation order, which keeps every
    downstream artifact bit-reproducible.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.ascontiguousarray(values, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def num_values(self) -> int:
        return sum(int(t.data.size) for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad_global_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                g = t.grad.ravel()
                total += float(g @ g)
        return float(np.sqrt(total))

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of all parameter values, for checkpointing in memory."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            arr = values[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for parameter {name!r}")
            t.data = np.ascontiguousarray(arr, dtype=self.dtype)


class Adam:
    """Adam with global-norm gradient clipping applied before each update."""

    def __init__(
        self,
        store: ParameterStore,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float = 100.0,
    ):
        self.store = store
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.clip_norm = float(clip_norm)
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self) -> float:
        """Clip gradients to the global norm bound, then update.

        Parameters without a gradient are left untouched (their moment
        state does not advance either).  Returns the pre-clip global
        gradient norm.  Raises on a non-finite gradient norm.
        """
        norm = self.store.grad_global_norm()
        if not np.isfinite(norm):
            raise ValueError("non-finite gradient norm; training has diverged")
        scale = 1.0
        if norm > self.clip_norm:
            scale = self.clip_norm / norm

        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for name, p in self.store.items():
            if p.grad is None:
                continue
            g = p.grad * scale if scale != 1.0 else p.grad
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self._m[name] = m
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            # decaying moments sweep through the subnormal range once
            # gradients vanish, and subnormal arithmetic is very slow on
            # common CPUs; flushing to zero changes no update visibly
            tiny = np.finfo(m.dtype).tiny
            m[np.abs(m) < tiny] = 0.0
            v[v < tiny] = 0.0
            p.data = p.data - self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers keyed for serialization, in parameter order."""
        out: dict[str, np.ndarray] = {}
        for name in self.store.names():
            if name in self._m:
                out[f"m:{name}"] = self._m[name]
                out[f"v:{name}"] = self._v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.step_count = int(step_count)
        self._m.clear()
        self._v.clear()
        for name, p in self.store.items():
            mk, vk = f"m:{name}", f"v:{name}"
            if mk in arrays:
                m = np.ascontiguousarray(arrays[mk], dtype=p.data.dtype)
                v = np.ascontiguousarray(arrays[vk], dtype=p.data.dtype)
                if m.shape != p.data.shape or v.shape != p.data.shape:
                    raise ValueError(f"optimizer state shape mismatch for {name!r}")
                self._m[name] = m
                self._v[name] = v
