"""Layer functions shared by both branches.

All layers take activations shaped ``(..., T, d)``: time on axis -2, features
on axis -1, any number of leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EvenKernel, ShapeMismatch, UninitializedStats
from .params import ones, uniform, zeros

TRAIN = "train"
EVAL = "eval"


def _check_mode(mode: str) -> None:
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


def _feature_dim(x: Tensor, d: int, what: str) -> None:
    if x.shape[-1] != d:
        raise ShapeMismatch(f"{what}: expected feature dim {d}, got shape {x.shape}")


def unsqueeze_time(v: Tensor) -> Tensor:
    """(..., d) -> (..., 1, d) so a per-sequence vector broadcasts over time."""
    return ad.reshape(v, v.shape[:-1] + (1, v.shape[-1]))


# -- affine maps -------------------------------------------------------------


def linear(x: Tensor, W: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x W + bias, applied to every leading index."""
    if x.shape[-1] != W.shape[-2]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {W.shape}")
    y = ad.matmul(x, W)
    if bias is not None:
        if bias.shape[-1] != W.shape[-1]:
            raise ShapeMismatch(f"linear: bias {bias.shape} vs weight {W.shape}")
        y = y + bias
    return y


def pointwise_conv(x: Tensor, W: Tensor, bias: Tensor | None = None) -> Tensor:
    """Kernel-size-1 convolution over time; identical to :func:`linear`."""
    return linear(x, W, bias)


def depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1-D cross-correlation over time with zero "same" padding.

    ``kernel`` is ``(k, d)`` with ``k`` odd; output channel ``c`` only sees
    input channel ``c``.
    """
    k = kernel.shape[-2]
    if k % 2 == 0:
        raise EvenKernel(f"depthwise kernel size must be odd, got {k}")
    _feature_dim(x, kernel.shape[-1], "depthwise_conv1d")
    T = x.shape[-2]
    half = k // 2
    xp = ad.pad(x, [(half, half), (0, 0)])
    out = None
    for j in range(k):
        tap = xp[..., j:j + T, :] * kernel[..., j, :]
        out = tap if out is None else out + tap
    return out


# -- normalization -----------------------------------------------------------


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(ones((d,)), zeros((d,)))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    _feature_dim(x, gamma.shape[-1], "layer_norm")
    mu = ad.reduce_mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.reduce_mean(xc * xc, axis=-1, keepdims=True)
    return xc * ad.power(var + eps, -0.5) * gamma + beta


def apply_layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    return layer_norm(x, p.gamma, p.beta, p.eps)


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics.

    Statistics are taken per channel over the time axis (-2) and, for inputs
    of rank >= 3, the batch axis (-3); a single ``(T, d)`` sequence is
    normalized over its own frames. Further leading axes are kept separate and
    averaged only when updating running stats. Variances are biased.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    num_updates: np.ndarray = field(default_factory=lambda: np.zeros(1))
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def init(cls, d: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(ones((d,)), zeros((d,)), np.zeros(d), np.ones(d), np.zeros(1), momentum, eps)


def batch_norm(x: Tensor, state: BatchNormState, mode: str = TRAIN, update_stats: bool = True) -> Tensor:
    _check_mode(mode)
    _feature_dim(x, state.gamma.shape[-1], "batch_norm")
    if mode == EVAL:
        if state.num_updates[0] < 1:
            raise UninitializedStats("batch_norm in eval mode before any training-mode update")
        xhat = (x - state.running_mean) / np.sqrt(state.running_var + state.eps)
        return xhat * state.gamma + state.beta
    axes = (-3, -2) if x.ndim >= 3 else (-2,)
    mu = ad.reduce_mean(x, axis=axes, keepdims=True)
    xc = x - mu
    var = ad.reduce_mean(xc * xc, axis=axes, keepdims=True)
    if update_stats:
        m = state.momentum
        lead = tuple(range(x.ndim - 1))
        state.running_mean[:] = (1.0 - m) * state.running_mean + m * mu.data.mean(axis=lead)
        state.running_var[:] = (1.0 - m) * state.running_var + m * var.data.mean(axis=lead)
        state.num_updates += 1
    return xc * ad.power(var + state.eps, -0.5) * state.gamma + state.beta


# -- activations -------------------------------------------------------------


relu = ad.relu
sigmoid = ad.sigmoid
swish = ad.swish
softmax = ad.softmax


@dataclass
class DyReluParams:
    """Conditioner MLP and coefficient scheme of the dynamic ReLU.

    ``W2`` emits ``2*K*d`` values laid out as ``[slopes (K x d), intercepts (K x d)]``.
    """

    W1: Tensor
    W2: Tensor
    base_slopes: tuple[float, ...] = (1.0, 0.0)
    base_intercepts: tuple[float, ...] = (0.0, 0.0)
    lambda_slope: float = 1.0
    lambda_intercept: float = 0.5
    K: int = 2
    r: int = 4

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, K: int = 2, r: int = 4) -> "DyReluParams":
        hidden = max(d // r, 1)
        base_slopes = (1.0,) + (0.0,) * (K - 1)
        base_intercepts = (0.0,) * K
        return cls(uniform(rng, (d, hidden), d), uniform(rng, (hidden, 2 * K * d), hidden),
                   base_slopes, base_intercepts, K=K, r=r)


def dyrelu_coefficients(G: Tensor, params: DyReluParams) -> Tensor:
    """theta = 2*sigmoid(relu(mean_t(G) W1) W2) - 1, in [-1, 1]^(2Kd)."""
    pooled = ad.reduce_mean(G, axis=-2)
    return 2.0 * ad.sigmoid(ad.matmul(ad.relu(ad.matmul(pooled, params.W1)), params.W2)) - 1.0


def dynamic_relu(x: Tensor, G: Tensor, params: DyReluParams) -> Tensor:
    """Piecewise-linear activation with per-channel coefficients conditioned on ``G``.

    y[t, c] = max_k (a_k[c] * x[t, c] + b_k[c]) where the coefficients are
    ``base + lambda * theta``.
    """
    if x.shape[-2:] != G.shape[-2:]:
        raise ShapeMismatch(f"dynamic_relu: x {x.shape} vs G {G.shape}")
    d, K = x.shape[-1], params.K
    if params.W2.shape[-1] != 2 * K * d:
        raise ShapeMismatch(f"dynamic_relu: W2 width {params.W2.shape[-1]} != 2*K*d = {2 * K * d}")
    theta = dyrelu_coefficients(G, params)
    out = None
    for k in range(K):
        a = params.base_slopes[k] + params.lambda_slope * theta[..., k * d:(k + 1) * d]
        b = params.base_intercepts[k] + params.lambda_intercept * theta[..., (K + k) * d:(K + k + 1) * d]
        branch = x * unsqueeze_time(a) + unsqueeze_time(b)
        out = branch if out is None else ad.maximum(out, branch)
    return out


@dataclass
class SqueezeExcitationParams:
    W_down: Tensor
    W_up: Tensor
    r: int = 4

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, r: int = 4) -> "SqueezeExcitationParams":
        hidden = max(d // r, 1)
        return cls(uniform(rng, (d, hidden), d), uniform(rng, (hidden, d), hidden), r)


def squeeze_excitation(x: Tensor, params: SqueezeExcitationParams) -> Tensor:
    """Scale each channel by sigmoid(relu(mean_t(x) W_down) W_up)."""
    _feature_dim(x, params.W_down.shape[-2], "squeeze_excitation")
    s = ad.sigmoid(ad.matmul(ad.relu(ad.matmul(ad.reduce_mean(x, axis=-2), params.W_down)), params.W_up))
    return x * unsqueeze_time(s)


def dropout(x: Tensor, p: float, mode: str = EVAL, rng: np.random.Generator | int | None = None) -> Tensor:
    """Inverted dropout in train mode, identity in eval mode."""
    _check_mode(mode)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if mode == EVAL or p == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = rng.random(x.shape) >= p
    return x * (keep / (1.0 - p))
