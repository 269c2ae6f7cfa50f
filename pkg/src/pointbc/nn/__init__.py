"""Neural network core: numpy autodiff, layers, mixture head, optimizer."""

from . import tensor
from .checkpoint import load_store, read_arrays, save_store, write_arrays
from .gmm import GMMHead, GMMParams, gmm_mean, gmm_mode, gmm_nll, gmm_sample
from .layers import (
    MLP,
    FeedForward,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    PointSetEncoder,
    TransformerBlock,
    TransformerEncoder,
)
from .optim import Adam, ParameterStore
from .tensor import Tensor, grad_enabled, no_grad

__all__ = [
    "Adam",
    "FeedForward",
    "GMMHead",
    "GMMParams",
    "LayerNorm",
    "Linear",
    "MLP",
    "MultiHeadSelfAttention",
    "ParameterStore",
    "PointSetEncoder",
    "Tensor",
    "TransformerBlock",
    "TransformerEncoder",
    "gmm_mean",
    "gmm_mode",
    "gmm_nll",
    "gmm_sample",
    "grad_enabled",
    "load_store",
    "no_grad",
    "read_arrays",
    "save_store",
    "tensor",
    "write_arrays",
]
