"""Gaussian mixture action head: parameters, likelihood, sampling.

The mixture has K modes over an A-dimensional action with diagonal
covariance.  The negative log likelihood runs through log-sum-exp so
tiny stds and lopsided logits stay numerically stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import MLP
from .optim import ParameterStore
from .tensor import Tensor

LOG_TWO_PI = float(np.log(2.0 * np.pi))


@dataclass
class GMMParams:
    """Mixture parameters for a batch.

    logits: (..., K) unnormalized mode weights.
    means: (..., K, A).
    log_stds: (..., K, A) diagonal log standard deviations.
    Fields are Tensors inside a training graph, plain arrays otherwise.
    """

    logits: Tensor | np.ndarray
    means: Tensor | np.ndarray
    log_stds: Tensor | np.ndarray

    def detach(self) -> "GMMParams":
        def arr(x):
            return x.data.copy() if isinstance(x, Tensor) else np.asarray(x).copy()

        return GMMParams(arr(self.logits), arr(self.means), arr(self.log_stds))

    @property
    def num_modes(self) -> int:
        data = self.logits.data if isinstance(self.logits, Tensor) else self.logits
        return data.shape[-1]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def gmm_nll(params: GMMParams, actions: np.ndarray | Tensor) -> Tensor:
    """Mean negative log likelihood of actions under the mixture.

    actions: (..., A) matching the leading dims of params.  Returns a
    scalar Tensor, graph-connected when params are graph tensors.
    """
    logits = _as_tensor(params.logits)
    means = _as_tensor(params.means)
    log_stds = _as_tensor(params.log_stds)
    acts = actions.data if isinstance(actions, Tensor) else np.asarray(actions)
    a_dim = acts.shape[-1]

    diff = acts[..., None, :] - means  # (..., K, A), actions act as a constant
    z = diff * T.exp(T.neg(log_stds))
    quad = T.tsum(z * z, axis=-1) * 0.5
    log_det = T.tsum(log_stds, axis=-1)
    log_comp = T.neg(quad + log_det + 0.5 * a_dim * LOG_TWO_PI)  # (..., K)
    log_weights = logits - T.logsumexp(logits, axis=-1, keepdims=True)
    log_prob = T.logsumexp(log_weights + log_comp, axis=-1)
    return T.neg(T.tmean(log_prob))


def gmm_sample(params: GMMParams, rng: np.random.Generator) -> np.ndarray:
    """Draw one action per batch element: pick a mode, then a Gaussian draw.

    params fields must be plain arrays (detach a training-graph output
    first).  Returns (..., A).
    """
    logits = np.asarray(params.logits)
    means = np.asarray(params.means)
    log_stds = np.asarray(params.log_stds)
    k = logits.shape[-1]
    a_dim = means.shape[-1]
    lead = logits.shape[:-1]

    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)

    flat_probs = probs.reshape(-1, k)
    flat_means = means.reshape(-1, k, a_dim)
    flat_log_stds = log_stds.reshape(-1, k, a_dim)
    out = np.empty((flat_probs.shape[0], a_dim), dtype=np.float64)
    for i in range(flat_probs.shape[0]):
        mode = int(rng.choice(k, p=flat_probs[i]))
        noise = rng.standard_normal(a_dim)
        out[i] = flat_means[i, mode] + np.exp(flat_log_stds[i, mode]) * noise
    return out.reshape(lead + (a_dim,))


def gmm_mean(params: GMMParams) -> np.ndarray:
    """Expected action: mode-probability weighted average of the means."""
    logits = params.logits.data if isinstance(params.logits, Tensor) else np.asarray(params.logits)
    means = params.means.data if isinstance(params.means, Tensor) else np.asarray(params.means)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    return (probs[..., None] * means).sum(axis=-2)


def gmm_mode(params: GMMParams) -> np.ndarray:
    """Deterministic decode: the mean of the highest-weight mode.

    When modes sit on opposite sides of zero the probability-weighted
    average shrinks toward zero; taking the dominant mode keeps the
    commanded magnitude.
    """
    logits = params.logits.data if isinstance(params.logits, Tensor) else np.asarray(params.logits)
    means = params.means.data if isinstance(params.means, Tensor) else np.asarray(params.means)
    top = logits.argmax(axis=-1)
    return np.take_along_axis(means, top[..., None, None], axis=-2)[..., 0, :]


class GMMHead:
    """MLP from a latent vector to mixture parameters.

    Output layout per element: K logits, then K*A means, then K*A log
    stds.  The final-layer columns feeding the log-std slice start at
    zero (biases are zero everywhere), so initial stds are exactly one.
    """

    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        latent_dim: int,
        hidden: int,
        modes: int,
        action_dim: int,
        rng: np.random.Generator,
    ):
        self.modes = modes
        self.action_dim = action_dim
        out_dim = modes + 2 * modes * action_dim
        self.mlp = MLP(store, prefix, [latent_dim, hidden, hidden, out_dim], rng)
        last = self.mlp.layers[-1]
        last.w.data[:, modes + modes * action_dim :] = 0

    def __call__(self, latent: Tensor) -> GMMParams:
        out = self.mlp(latent)
        k, a = self.modes, self.action_dim
        lead = out.shape[:-1]
        logits = out[..., :k]
        means = T.reshape(out[..., k : k + k * a], lead + (k, a))
        log_stds = T.reshape(out[..., k + k * a :], lead + (k, a))
        return GMMParams(logits, means, log_stds)
