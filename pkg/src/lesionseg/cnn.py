"""Residual CNN encoder producing feature maps at /4, /8 and /16 scales."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, Module, Sequential
from .tensor import Tensor


class ConfigError(ValueError):
    """Raised when a configuration violates an architectural constraint."""


@dataclass
class CnnConfig:
    stem_channels: int = 64
    block_channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    blocks_per_stage: tuple[int, int, int, int] = (3, 4, 6, 3)

    def __post_init__(self):
        if self.stem_channels <= 0 or any(c <= 0 for c in self.block_channels):
            raise ConfigError("channel counts must be positive")
        if any(n <= 0 for n in self.blocks_per_stage):
            raise ConfigError("stage depths must be positive")

    @classmethod
    def toy(cls) -> "CnnConfig":
        return cls(stem_channels=8, block_channels=(8, 16, 32, 64),
                   blocks_per_stage=(1, 1, 1, 1))


@dataclass
class CnnFeatures:
    """Multi-scale encoder outputs: g0 at /16, g1 at /8, g2 at /4."""
    g0: Tensor
    g1: Tensor
    g2: Tensor


class BasicBlock(Module):
    """Two 3x3 conv+bn layers with identity or projected shortcut."""

    def __init__(self, in_channels: int, out_channels: int, stride: int,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng,
                            stride=stride, padding=1)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.proj = Conv2d(in_channels, out_channels, 1, rng,
                               stride=stride)
            self.proj_bn = BatchNorm2d(out_channels)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x: Tensor) -> Tensor:
        out = T.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        shortcut = x if self.proj is None else self.proj_bn(self.proj(x))
        return T.relu(out + shortcut)


class CnnEncoder(Module):
    """ResNet-34-shaped backbone with the classifier stage removed.

    The stem (7x7 stride-2 conv + 3x3 stride-2 max pool) lands at /4;
    the four residual stages then run at /4, /4, /8 and /16, so the
    tapped features g2/g1/g0 sit at /4, /8 and /16 of the input.
    """

    STAGE_STRIDES = (1, 1, 2, 2)

    def __init__(self, cfg: CnnConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.stem_conv = Conv2d(3, cfg.stem_channels, 7, rng,
                                stride=2, padding=3)
        self.stem_bn = BatchNorm2d(cfg.stem_channels)
        self.stages = []
        in_ch = cfg.stem_channels
        for width, depth, stride in zip(cfg.block_channels,
                                        cfg.blocks_per_stage,
                                        self.STAGE_STRIDES):
            blocks = [BasicBlock(in_ch, width, stride, rng)]
            blocks += [BasicBlock(width, width, 1, rng)
                       for _ in range(depth - 1)]
            self.stages.append(Sequential(*blocks))
            in_ch = width

    def forward(self, image: Tensor) -> CnnFeatures:
        _, _, h, w = image.shape
        if h % 16 or w % 16:
            raise ConfigError(
                f"input spatial dims must be divisible by 16, got {h}x{w}")
        x = T.relu(self.stem_bn(self.stem_conv(image)))
        x = T.max_pool2d(x, kernel=3, stride=2, padding=1)
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        _, g2, g1, g0 = taps
        return CnnFeatures(g0=g0, g1=g1, g2=g2)
