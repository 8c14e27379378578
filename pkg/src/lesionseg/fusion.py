"""Cross-branch feature fusion and the attention-gated decoding chain.

Per scale, transformer features pass through SE-style channel attention,
CNN features through a max/mean spatial attention, and a Hadamard
interaction term couples the two; the three maps are concatenated into a
residual block. Decoding walks the scales coarse-to-fine with additive
attention gates, and three sigmoid heads emit full-resolution masks.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .cnn import ConfigError
from .nn import (BatchNorm2d, Conv2d, ConvBnRelu, Linear, Module)
from .tensor import Tensor


class FusionMode(str, Enum):
    """Ablation lattice of the fusion block, smallest to largest."""
    CONCAT_RES = "concat_res"
    CONCAT_RES_SPATIAL = "concat_res_spatial"
    CONCAT_RES_CHANNEL = "concat_res_channel"
    FULL = "full"


@dataclass
class FusionConfig:
    se_reduction: int = 4
    fusion_mode: FusionMode = FusionMode.FULL
    # interaction width per scale; None means "match the CNN width there"
    interaction_dims: tuple[int, int, int] | None = None

    def validate(self, channels: tuple[int, int, int]) -> None:
        for c in channels:
            if c % self.se_reduction:
                raise ConfigError(
                    f"se_reduction {self.se_reduction} must divide channel "
                    f"count {c}")
        if self.interaction_dims is not None \
                and any(d <= 0 for d in self.interaction_dims):
            raise ConfigError("interaction widths must be positive")

    def interaction_width(self, scale: int,
                          channels: tuple[int, int, int]) -> int:
        if self.interaction_dims is None:
            return channels[scale]
        return self.interaction_dims[scale]


@dataclass
class FusedFeatures:
    """Fusion outputs plus the decoded map and full-resolution heads.

    f0/f1/f2 live at /16, /8 and /4; fhat2 is the finest decoded feature;
    the three heads are probability maps at input resolution.
    """
    f0: Tensor
    f1: Tensor
    f2: Tensor
    fhat2: Tensor
    head_main: Tensor
    head_tfm: Tensor
    head_f0: Tensor


class ChannelAttention(Module):
    """SE block: squeeze spatially, excite per channel with a sigmoid gate."""

    def __init__(self, channels: int, reduction: int,
                 rng: np.random.Generator):
        super().__init__()
        hidden = channels // reduction
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        b, c = x.shape[0], x.shape[1]
        gates = T.sigmoid(self.fc2(T.relu(self.fc1(T.global_avg_pool(x)))))
        return x * gates.reshape(b, c, 1, 1)


class SpatialAttention(Module):
    """Sigmoid map from channel-max and channel-mean, shared across channels."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(2, 1, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        pooled = T.concat_channels([T.max_along(x, axis=1, keepdims=True),
                                    x.mean(axis=1, keepdims=True)])
        return x * T.sigmoid(self.conv(pooled))


class ResidualMerge(Module):
    """Two 3x3 conv+bn(+relu) layers over a concat, with a 1x1 shortcut."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, padding=1)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(out_channels)
        self.proj = Conv2d(in_channels, out_channels, 1, rng)
        self.proj_bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        out = T.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return T.relu(out + self.proj_bn(self.proj(x)))


class BiFusion(Module):
    """Single-scale fusion of a transformer map with a CNN map."""

    def __init__(self, channels: int, interaction: int, cfg: FusionConfig,
                 rng: np.random.Generator):
        super().__init__()
        mode = cfg.fusion_mode
        self.mode = mode
        if mode in (FusionMode.CONCAT_RES_CHANNEL, FusionMode.FULL):
            self.channel_attn = ChannelAttention(channels, cfg.se_reduction,
                                                 rng)
        if mode in (FusionMode.CONCAT_RES_SPATIAL, FusionMode.FULL):
            self.spatial_attn = SpatialAttention(rng)
        if mode is FusionMode.FULL:
            self.w1 = Conv2d(channels, interaction, 1, rng)
            self.w2 = Conv2d(channels, interaction, 1, rng)
            self.interaction = ConvBnRelu(interaction, channels, 3, rng)
            merged_in = 3 * channels
        else:
            merged_in = 2 * channels
        self.merge = ResidualMerge(merged_in, channels, rng)

    def forward(self, t: Tensor, g: Tensor) -> Tensor:
        if t.shape[2:] != g.shape[2:] or t.shape[0] != g.shape[0]:
            raise T.DimensionError(
                f"fusion inputs disagree spatially: {t.shape} vs {g.shape}")
        t_in = self.channel_attn(t) \
            if self.mode in (FusionMode.CONCAT_RES_CHANNEL, FusionMode.FULL) \
            else t
        g_in = self.spatial_attn(g) \
            if self.mode in (FusionMode.CONCAT_RES_SPATIAL, FusionMode.FULL) \
            else g
        if self.mode is FusionMode.FULL:
            product = T.hadamard(self.w1(t), self.w2(g))
            parts = [self.interaction(product), t_in, g_in]
        else:
            parts = [t_in, g_in]
        return self.merge(T.concat_channels(parts))


class AttentionGate(Module):
    """Additive gate: a 1-channel sigmoid map filters the fine feature."""

    def __init__(self, x_channels: int, gate_channels: int,
                 rng: np.random.Generator):
        super().__init__()
        inter = x_channels
        self.theta_x = Conv2d(x_channels, inter, 1, rng)
        self.theta_g = Conv2d(gate_channels, inter, 1, rng)
        self.psi = Conv2d(inter, 1, 1, rng)
        self.last_gate: np.ndarray | None = None

    def forward(self, x: Tensor, gate: Tensor) -> Tensor:
        if x.shape[2:] != gate.shape[2:]:
            raise T.DimensionError(
                f"gate must be upsampled to the fine scale: {x.shape} vs "
                f"{gate.shape}")
        psi = T.sigmoid(self.psi(T.relu(self.theta_x(x) + self.theta_g(gate))))
        self.last_gate = psi.data
        return x * psi


class FusionDecoder(Module):
    """Coarse-to-fine decoding with AG skips, plus the three mask heads."""

    def __init__(self, channels: tuple[int, int, int],
                 rng: np.random.Generator):
        super().__init__()
        c0, c1, c2 = channels
        self.gate1 = AttentionGate(c1, c0, rng)
        self.refine1 = ConvBnRelu(c0 + c1, c1, 3, rng)
        self.gate2 = AttentionGate(c2, c1, rng)
        self.refine2 = ConvBnRelu(c1 + c2, c2, 3, rng)
        self.head_main = Conv2d(c2, 1, 1, rng)
        self.head_tfm = Conv2d(c2, 1, 1, rng)
        self.head_f0 = Conv2d(c0, 1, 1, rng)

    @staticmethod
    def _to_full(x: Tensor, ups: int) -> Tensor:
        for _ in range(ups):
            x = T.bilinear_upsample2x(x)
        return T.sigmoid(x)

    def forward(self, f0: Tensor, f1: Tensor, f2: Tensor,
                t2: Tensor) -> FusedFeatures:
        fhat0 = f0
        up0 = T.bilinear_upsample2x(fhat0)
        fhat1 = self.refine1(T.concat_channels([up0, self.gate1(f1, up0)]))
        up1 = T.bilinear_upsample2x(fhat1)
        fhat2 = self.refine2(T.concat_channels([up1, self.gate2(f2, up1)]))
        return FusedFeatures(
            f0=f0, f1=f1, f2=f2, fhat2=fhat2,
            head_main=self._to_full(self.head_main(fhat2), 2),
            head_tfm=self._to_full(self.head_tfm(t2), 2),
            head_f0=self._to_full(self.head_f0(fhat0), 4),
        )
