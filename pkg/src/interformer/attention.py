"""Multi-head self-attention with relative positional scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import MaskLengthMismatch, OddDimension, ShapeMismatch
from .layers import EVAL, dropout
from .params import uniform, zeros

# Finite stand-in for -inf: exp() of it after the max shift underflows to
# exactly 0, and it survives the debug-mode finiteness check.
MASK_VALUE = -1e30


@dataclass
class MhsaParams:
    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor
    W_pos: Tensor
    u: Tensor
    v: Tensor
    heads: int

    @classmethod
    def init(cls, d: int, heads: int, rng: np.random.Generator) -> "MhsaParams":
        if d % heads:
            raise ShapeMismatch(f"model dim {d} not divisible by {heads} heads")
        mats = [uniform(rng, (d, d), d) for _ in range(5)]
        return cls(*mats, zeros((d,)), zeros((d,)), heads)


def relative_position_embeddings(T: int, d: int) -> np.ndarray:
    """Sinusoids for offsets T-1, T-2, ..., -(T-1); shape (2T-1, d).

    Even columns hold sin(offset * f_i), odd columns cos(offset * f_i) with
    f_i = 10000^(-2i/d).
    """
    if T < 1:
        raise ValueError(f"sequence length must be >= 1, got {T}")
    if d % 2:
        raise OddDimension(f"embedding dim must be even, got {d}")
    offsets = np.arange(T - 1, -T, -1, dtype=np.float64)[:, None]
    freqs = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((2 * T - 1, d))
    table[:, 0::2] = np.sin(offsets * freqs)
    table[:, 1::2] = np.cos(offsets * freqs)
    return table


def _split_heads(x: Tensor, h: int) -> Tensor:
    # (..., T, d) -> (..., h, T, d/h)
    d = x.shape[-1]
    return ad.swapaxes(ad.reshape(x, x.shape[:-1] + (h, d // h)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    # (..., h, T, dk) -> (..., T, h*dk)
    x = ad.swapaxes(x, -2, -3)
    return ad.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def relative_offset_index(T: int) -> tuple[np.ndarray, np.ndarray]:
    """Index pair selecting, for query i and key j, the table row of offset i - j."""
    i = np.arange(T)[:, None]
    j = np.arange(T)[None, :]
    return np.broadcast_to(i, (T, T)), (T - 1) - i + j


def relative_mhsa(
    x: Tensor,
    params: MhsaParams,
    mask: np.ndarray | None = None,
    dropout_p: float = 0.0,
    mode: str = EVAL,
    rng: np.random.Generator | None = None,
    return_weights: bool = False,
):
    """Self-attention whose scores add a content term and a relative-position term.

    score(i, j) = ((q_i + u) . k_j + (q_i + v) . r_{i-j}) / sqrt(d/h), with r
    the sinusoid table projected by ``W_pos``. ``mask`` marks valid frames
    with True along the last axis; invalid keys are excluded from the softmax.
    """
    T, d = x.shape[-2], x.shape[-1]
    h = params.heads
    if params.W_q.shape[-2] != d:
        raise ShapeMismatch(f"relative_mhsa: input {x.shape} vs W_q {params.W_q.shape}")
    dk = d // h
    q = _split_heads(ad.matmul(x, params.W_q), h)
    k = _split_heads(ad.matmul(x, params.W_k), h)
    v = _split_heads(ad.matmul(x, params.W_v), h)
    pos = _split_heads(ad.matmul(Tensor(relative_position_embeddings(T, d)), params.W_pos), h)
    u = ad.reshape(params.u, params.u.shape[:-1] + (h, 1, dk))
    vb = ad.reshape(params.v, params.v.shape[:-1] + (h, 1, dk))

    content = ad.matmul(q + u, ad.swapaxes(k, -1, -2))
    pos_full = ad.matmul(q + vb, ad.swapaxes(pos, -1, -2))
    ii, jj = relative_offset_index(T)
    position = pos_full[..., ii, jj]
    scores = (content + position) * (1.0 / math.sqrt(dk))

    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-1] != T:
            raise MaskLengthMismatch(f"mask length {mask.shape[-1]} != sequence length {T}")
        invalid = ~mask.reshape(mask.shape[:-1] + (1, 1, T))
        scores = ad.masked_fill(scores, invalid, MASK_VALUE)
    weights = ad.softmax(scores, axis=-1)
    weights_used = dropout(weights, dropout_p, mode, rng)
    out = ad.matmul(_merge_heads(ad.matmul(weights_used, v)), params.W_o)
    return (out, weights) if return_weights else out
