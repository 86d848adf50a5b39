"""The two-branch encoder block, its fusion operators, front-end and stack.

Evaluation order inside a block (chosen so the two gates do not form a cycle):

1. ``x1 = x + 0.5 * dropout(FFN1(x))``
2. ``G_raw = MHSA(LN(x1))``                       transformer branch
3. ``L = conv_branch(x1, G_raw)``                 gated by G_raw (G2L), DyReLU on G_raw
4. ``G = (PW(LN(G_raw)) + b) * sigmoid(L)``       L2G gate
5. ``F = fuse(L, G)``                             add | concat | sfm
6. ``x2 = x1 + dropout(F)``
7. ``out = LN(x2 + 0.5 * dropout(FFN2(x2)))``
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .attention import MhsaParams, relative_mhsa
from .autodiff import Tensor
from .errors import ConfigError, InputTooShort, ShapeMismatch
from .layers import (
    EVAL,
    BatchNormState,
    DyReluParams,
    LayerNormParams,
    SqueezeExcitationParams,
    apply_layer_norm,
    batch_norm,
    depthwise_conv1d,
    dropout,
    dynamic_relu,
    linear,
    pointwise_conv,
    squeeze_excitation,
    swish,
    unsqueeze_time,
)
from .params import named_parameters, uniform, zeros

FUSION_MODES = ("add", "concat", "sfm")


@dataclass
class BlockConfig:
    d: int = 32
    heads: int = 4
    kernel: int = 3
    ffn_expansion: int = 4
    fusion_mode: str = "sfm"
    enable_l2g: bool = True
    enable_g2l: bool = True
    enable_dyrelu: bool = True
    dropout_p: float = 0.1
    N: int = 2
    sfm_c: int | None = None
    se_ratio: int = 4
    dyrelu_ratio: int = 4
    dyrelu_K: int = 2
    feat_dim: int = 16
    subsample_channels: int = 16

    def __post_init__(self):
        self.validate()

    @property
    def c(self) -> int:
        return self.sfm_c if self.sfm_c is not None else max(self.d // 2, 1)

    def validate(self) -> None:
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of heads={self.heads}", "heads")
        if self.d % 2:
            raise ConfigError(f"d={self.d} must be even for sinusoidal position tables", "d")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel={self.kernel} must be odd", "kernel")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode={self.fusion_mode!r} not in {FUSION_MODES}", "fusion_mode")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p={self.dropout_p} must lie in [0, 1)", "dropout_p")
        if self.N < 0:
            raise ConfigError(f"N={self.N} must be >= 0", "N")
        if self.c < 1:
            raise ConfigError("sfm bottleneck width must be >= 1", "sfm_c")
        for name in ("ffn_expansion", "se_ratio", "dyrelu_ratio", "dyrelu_K", "feat_dim", "subsample_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", name)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "BlockConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown block config key {key!r}", key)
        return cls(**values)


# -- parameter bundles -------------------------------------------------------


@dataclass
class FfnParams:
    ln: LayerNormParams
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, d: int, expansion: int, rng) -> "FfnParams":
        hidden = expansion * d
        return cls(LayerNormParams.init(d), uniform(rng, (d, hidden), d), zeros((hidden,)),
                   uniform(rng, (hidden, d), hidden), zeros((d,)))


@dataclass
class BfimParams:
    """Weights of one gated interaction.

    ``pw_gate_in``/``b`` project the gated path. The G2L instance also owns
    ``ln_src``/``pw_gate_src`` to turn the attention output into a gate; the
    L2G instance uses ``ln_src`` on the attention output before projection
    and gates with sigmoid(L) directly.
    """

    pw_gate_in: Tensor
    b: Tensor
    ln_src: LayerNormParams | None = None
    pw_gate_src: Tensor | None = None


@dataclass
class ConvBranchParams:
    bfim: BfimParams
    dw_kernel: Tensor
    bn: BatchNormState
    dyrelu: DyReluParams | None
    pw_out: Tensor
    pw_out_b: Tensor


@dataclass
class TransformerBranchParams:
    ln: LayerNormParams
    mhsa: MhsaParams
    l2g: BfimParams | None


@dataclass
class SfmParams:
    W_f: Tensor
    W_u1: Tensor
    W_u2: Tensor
    se: SqueezeExcitationParams

    @property
    def c(self) -> int:
        return self.W_f.shape[-1]

    @classmethod
    def init(cls, d: int, c: int, rng, se_ratio: int = 4) -> "SfmParams":
        if c < 1:
            raise ShapeMismatch("sfm bottleneck width must be >= 1")
        return cls(uniform(rng, (2 * d, c), 2 * d), uniform(rng, (c, d), c), uniform(rng, (c, d), c),
                   SqueezeExcitationParams.init(d, rng, se_ratio))


@dataclass
class BlockParams:
    ffn1: FfnParams
    trans: TransformerBranchParams
    conv: ConvBranchParams
    fusion: SfmParams | Tensor | None
    ffn2: FfnParams
    ln_out: LayerNormParams


@dataclass
class SubsampleParams:
    conv1_W: Tensor
    conv1_b: Tensor
    conv2_W: Tensor
    conv2_b: Tensor
    proj_W: Tensor
    proj_b: Tensor


@dataclass
class EncoderParams:
    subsample: SubsampleParams
    blocks: list[BlockParams]


def init_block(config: BlockConfig, rng: np.random.Generator) -> BlockParams:
    d = config.d
    ffn1 = FfnParams.init(d, config.ffn_expansion, rng)
    l2g = None
    if config.enable_l2g:
        l2g = BfimParams(uniform(rng, (d, d), d), zeros((d,)), LayerNormParams.init(d))
    trans = TransformerBranchParams(LayerNormParams.init(d), MhsaParams.init(d, config.heads, rng), l2g)
    g2l = BfimParams(uniform(rng, (d, d), d), zeros((d,)))
    if config.enable_g2l:
        g2l.ln_src = LayerNormParams.init(d)
        g2l.pw_gate_src = uniform(rng, (d, d), d)
    dyrelu = DyReluParams.init(d, rng, config.dyrelu_K, config.dyrelu_ratio) if config.enable_dyrelu else None
    conv = ConvBranchParams(g2l, uniform(rng, (config.kernel, d), config.kernel), BatchNormState.init(d),
                            dyrelu, uniform(rng, (d, d), d), zeros((d,)))
    if config.fusion_mode == "sfm":
        fusion = SfmParams.init(d, config.c, rng, config.se_ratio)
    elif config.fusion_mode == "concat":
        fusion = uniform(rng, (2 * d, d), 2 * d)
    else:
        fusion = None
    ffn2 = FfnParams.init(d, config.ffn_expansion, rng)
    return BlockParams(ffn1, trans, conv, fusion, ffn2, LayerNormParams.init(d))


def subsampled_freq(F: int) -> int:
    return math.ceil(math.ceil(F / 2) / 2)


def init_subsample(config: BlockConfig, rng: np.random.Generator) -> SubsampleParams:
    C, d = config.subsample_channels, config.d
    flat = C * subsampled_freq(config.feat_dim)
    return SubsampleParams(uniform(rng, (3, 3, 1, C), 9), zeros((C,)),
                           uniform(rng, (3, 3, C, C), 9 * C), zeros((C,)),
                           uniform(rng, (flat, d), flat), zeros((d,)))


def init_encoder(config: BlockConfig, rng: np.random.Generator) -> EncoderParams:
    sub = init_subsample(config, rng)
    return EncoderParams(sub, [init_block(config, rng) for _ in range(config.N)])


# -- interactions ------------------------------------------------------------


class BranchOutputs(NamedTuple):
    L: Tensor
    G: Tensor


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape[-2:] != b.shape[-2:]:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")


def g2l_interaction(x: Tensor, G_raw: Tensor, params: BfimParams) -> Tensor:
    """h_l = (PW(x) + b) * sigmoid(PW_src(LN(G_raw)))."""
    _same_shape(x, G_raw, "g2l_interaction")
    gate = ad.sigmoid(pointwise_conv(apply_layer_norm(G_raw, params.ln_src), params.pw_gate_src))
    return pointwise_conv(x, params.pw_gate_in, params.b) * gate


def l2g_interaction(G_raw: Tensor, L: Tensor, params: BfimParams) -> Tensor:
    """h_g = (PW(LN(G_raw)) + b) * sigmoid(L)."""
    _same_shape(G_raw, L, "l2g_interaction")
    projected = pointwise_conv(apply_layer_norm(G_raw, params.ln_src), params.pw_gate_in, params.b)
    return projected * ad.sigmoid(L)


def conv_branch(x: Tensor, G_raw: Tensor, params: ConvBranchParams, config: BlockConfig,
                mode: str = EVAL, update_stats: bool = True) -> Tensor:
    _same_shape(x, G_raw, "conv_branch")
    if config.enable_g2l:
        h = g2l_interaction(x, G_raw, params.bfim)
    else:
        h = pointwise_conv(x, params.bfim.pw_gate_in, params.bfim.b)
    h = depthwise_conv1d(h, params.dw_kernel)
    h = batch_norm(h, params.bn, mode, update_stats=update_stats)
    h = dynamic_relu(h, G_raw, params.dyrelu) if config.enable_dyrelu else swish(h)
    return pointwise_conv(h, params.pw_out, params.pw_out_b)


def transformer_branch(x: Tensor, params: TransformerBranchParams, config: BlockConfig,
                       mask: np.ndarray | None = None) -> Tensor:
    """Raw attention output; the L2G gate is applied later by :func:`block_forward`."""
    return relative_mhsa(apply_layer_norm(x, params.ln), params.mhsa, mask)


# -- fusion ------------------------------------------------------------------


def add_fuse(outs: BranchOutputs) -> Tensor:
    _same_shape(outs.L, outs.G, "add_fuse")
    return outs.L + outs.G


def concat_fuse(outs: BranchOutputs, W_fuse: Tensor) -> Tensor:
    _same_shape(outs.L, outs.G, "concat_fuse")
    if W_fuse.shape[-2] != 2 * outs.L.shape[-1]:
        raise ShapeMismatch(f"concat_fuse: W_fuse {W_fuse.shape} vs features {outs.L.shape[-1]}")
    return linear(ad.concat([outs.L, outs.G], axis=-1), W_fuse)


def sfm_branch_weights(outs: BranchOutputs, params: SfmParams) -> Tensor:
    """Per-sequence, per-channel softmax over the two branches, shape ``(..., d, 2)``.

    Pools concat(L, G) over time, squeezes to ``c`` with ReLU, expands to two
    d-vectors of branch logits and normalizes each channel's pair.
    """
    X = ad.concat([outs.L, outs.G], axis=-1)
    pooled = ad.reduce_mean(X, axis=-2)
    squeezed = ad.relu(ad.matmul(pooled, params.W_f))
    logits = ad.stack([ad.matmul(squeezed, params.W_u1), ad.matmul(squeezed, params.W_u2)], axis=-1)
    return ad.softmax(logits, axis=-1)


def sfm_weights(outs: BranchOutputs, params: SfmParams) -> Tensor:
    """Weight alpha of the convolution branch, shape ``(..., d)``."""
    return sfm_branch_weights(outs, params)[..., 0]


def sfm_fuse(outs: BranchOutputs, params: SfmParams) -> Tensor:
    _same_shape(outs.L, outs.G, "sfm_fuse")
    d = outs.L.shape[-1]
    if params.W_f.shape[-2] != 2 * d or params.W_u1.shape[-2:] != params.W_u2.shape[-2:]:
        raise ShapeMismatch("sfm_fuse: parameter shapes inconsistent with features")
    alpha = unsqueeze_time(sfm_weights(outs, params))
    Y = alpha * outs.L + (1.0 - alpha) * outs.G
    return squeeze_excitation(Y, params.se)


def fuse(outs: BranchOutputs, fusion, config: BlockConfig) -> Tensor:
    if config.fusion_mode == "add":
        return add_fuse(outs)
    if config.fusion_mode == "concat":
        return concat_fuse(outs, fusion)
    return sfm_fuse(outs, fusion)


# -- block / encoder ---------------------------------------------------------


def feed_forward(x: Tensor, p: FfnParams, dropout_p: float, mode: str, rng) -> Tensor:
    h = swish(linear(apply_layer_norm(x, p.ln), p.W1, p.b1))
    return dropout(linear(h, p.W2, p.b2), dropout_p, mode, rng)


def block_forward(x: Tensor, params: BlockParams, config: BlockConfig, mode: str = EVAL,
                  rng: np.random.Generator | None = None, mask: np.ndarray | None = None,
                  update_stats: bool = True, return_branches: bool = False):
    if x.shape[-1] != config.d:
        raise ShapeMismatch(f"block_forward: input {x.shape} vs d={config.d}")
    p = config.dropout_p
    x1 = x + 0.5 * feed_forward(x, params.ffn1, p, mode, rng)
    G_raw = transformer_branch(x1, params.trans, config, mask)
    L = conv_branch(x1, G_raw, params.conv, config, mode, update_stats)
    G = l2g_interaction(G_raw, L, params.trans.l2g) if config.enable_l2g else G_raw
    outs = BranchOutputs(L, G)
    F = fuse(outs, params.fusion, config)
    x2 = x1 + dropout(F, p, mode, rng)
    out = apply_layer_norm(x2 + 0.5 * feed_forward(x2, params.ffn2, p, mode, rng), params.ln_out)
    return (out, outs) if return_branches else out


def conv2d_stride2(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """3x3 convolution, stride 2 on both spatial axes, zero padding 1.

    ``x`` is channels-last ``(..., T, F, C_in)``; ``W`` is ``(3, 3, C_in, C_out)``.
    """
    T, F, cin = x.shape[-3], x.shape[-2], x.shape[-1]
    if W.shape[-2] != cin:
        raise ShapeMismatch(f"conv2d: input channels {cin} vs kernel {W.shape}")
    To, Fo = (T + 1) // 2, (F + 1) // 2
    xp = ad.pad(x, [(1, 1), (1, 1), (0, 0)])
    taps = [xp[..., a:a + 2 * To - 1:2, c:c + 2 * Fo - 1:2, :] for a in range(3) for c in range(3)]
    patches = ad.concat(taps, axis=-1)
    kernel = ad.reshape(W, W.shape[:-4] + (9 * cin, W.shape[-1]))
    return ad.matmul(patches, kernel) + b


def subsample(features: Tensor, params: SubsampleParams, config: BlockConfig, mode: str = EVAL,
              rng: np.random.Generator | None = None) -> Tensor:
    """Two stride-2 conv layers with ReLU, then flatten and project to d."""
    T = features.shape[-2]
    if T < 4:
        raise InputTooShort(f"subsampling needs at least 4 frames, got {T}")
    x = ad.reshape(features, features.shape + (1,))
    x = ad.relu(conv2d_stride2(x, params.conv1_W, params.conv1_b))
    x = ad.relu(conv2d_stride2(x, params.conv2_W, params.conv2_b))
    x = ad.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))
    return dropout(linear(x, params.proj_W, params.proj_b), config.dropout_p, mode, rng)


def subsampled_length(T: int) -> int:
    return math.ceil(math.ceil(T / 2) / 2)


def encoder_forward(features: Tensor, params: EncoderParams, config: BlockConfig, mode: str = EVAL,
                    rng: np.random.Generator | None = None, update_stats: bool = True) -> Tensor:
    x = subsample(features, params.subsample, config, mode, rng)
    for block in params.blocks:
        x = block_forward(x, block, config, mode, rng, update_stats=update_stats)
    return x


# -- parameter accounting ----------------------------------------------------


def block_parameter_breakdown(config: BlockConfig) -> dict[str, int]:
    """Learnable scalars per layer of one block, computed from the config alone."""
    d, e = config.d, config.ffn_expansion
    ln = 2 * d
    ffn = ln + d * e * d + e * d + e * d * d + d
    out = {"ffn1": ffn, "mhsa": ln + 5 * d * d + 2 * d}
    if config.enable_l2g:
        out["l2g"] = ln + d * d + d
    out["conv.gate_in"] = d * d + d
    if config.enable_g2l:
        out["conv.g2l_gate"] = ln + d * d
    out["conv.depthwise"] = config.kernel * d
    out["conv.batchnorm"] = 2 * d
    if config.enable_dyrelu:
        hidden = max(d // config.dyrelu_ratio, 1)
        out["conv.dyrelu"] = d * hidden + hidden * 2 * config.dyrelu_K * d
    out["conv.pointwise"] = d * d + d
    if config.fusion_mode == "sfm":
        c, se_hidden = config.c, max(d // config.se_ratio, 1)
        out["fusion.sfm"] = 2 * d * c + 2 * c * d + 2 * d * se_hidden
    elif config.fusion_mode == "concat":
        out["fusion.concat"] = 2 * d * d
    out["ffn2"] = ffn
    out["ln_out"] = ln
    return out


def subsample_parameter_count(config: BlockConfig) -> int:
    C = config.subsample_channels
    flat = C * subsampled_freq(config.feat_dim)
    return (9 * C + C) + (9 * C * C + C) + (flat * config.d + config.d)


def count_parameters(config: BlockConfig) -> dict[str, int]:
    """Exact learnable-scalar counts: ``{"block", "subsample", "encoder"}``."""
    block = sum(block_parameter_breakdown(config).values())
    sub = subsample_parameter_count(config)
    return {"block": block, "subsample": sub, "encoder": sub + config.N * block}


def parameter_table(params) -> list[tuple[str, tuple[int, ...], int]]:
    """``(name, shape, size)`` for every learnable tensor of an instantiated bundle."""
    return [(name, t.shape, t.size) for name, t in named_parameters(params)]
