"""Full dual-branch segmentation network and its configuration presets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cnn import CnnConfig, CnnEncoder, CnnFeatures, ConfigError
from .fusion import (BiFusion, FusedFeatures, FusionConfig, FusionDecoder,
                     FusionMode)
from .nn import Module
from .tensor import Tensor
from .transformer import TfmFeatures, TransformerBranch, TransformerConfig


@dataclass
class LossWeights:
    """Deep-supervision coefficients: main head, aux f0 head, aux tfm head."""
    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass
class ModelConfig:
    input_hw: tuple[int, int] = (192, 256)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    boundary_kernel: int = 15
    boundary_lambda: float = 5.0

    def __post_init__(self):
        h, w = self.input_hw
        if h % 16 or w % 16:
            raise ConfigError(f"input dims must be divisible by 16, got {h}x{w}")
        self.fusion.validate(self.scale_channels())

    def scale_channels(self) -> tuple[int, int, int]:
        """Channel widths at the /16, /8 and /4 fusion scales."""
        c = self.cnn.block_channels
        return (c[3], c[2], c[1])


def toy_config(fusion_mode: FusionMode = FusionMode.FULL,
               input_hw: tuple[int, int] = (192, 256)) -> ModelConfig:
    return ModelConfig(
        input_hw=input_hw,
        cnn=CnnConfig.toy(),
        transformer=TransformerConfig.toy(),
        fusion=FusionConfig(se_reduction=4, fusion_mode=fusion_mode),
    )


def paper_shape_config(fusion_mode: FusionMode = FusionMode.FULL) -> ModelConfig:
    return ModelConfig(
        cnn=CnnConfig(),
        transformer=TransformerConfig(),
        fusion=FusionConfig(se_reduction=4, fusion_mode=fusion_mode),
    )


PRESETS = {"toy": toy_config, "paper-shape": paper_shape_config}


class SegNet(Module):
    """Parallel CNN + transformer encoder with fused, gated decoding."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        channels = cfg.scale_channels()
        self.cnn = CnnEncoder(cfg.cnn, rng)
        self.tfm = TransformerBranch(cfg.transformer, cfg.input_hw, channels,
                                     rng)
        self.fuse0 = BiFusion(channels[0],
                              cfg.fusion.interaction_width(0, channels),
                              cfg.fusion, rng)
        self.fuse1 = BiFusion(channels[1],
                              cfg.fusion.interaction_width(1, channels),
                              cfg.fusion, rng)
        self.fuse2 = BiFusion(channels[2],
                              cfg.fusion.interaction_width(2, channels),
                              cfg.fusion, rng)
        self.decoder = FusionDecoder(channels, rng)

    def forward_full(
            self, image: Tensor
    ) -> tuple[CnnFeatures, TfmFeatures, FusedFeatures]:
        g = self.cnn(image)
        t = self.tfm(image)
        f0 = self.fuse0(t.t0, g.g0)
        f1 = self.fuse1(t.t1, g.g1)
        f2 = self.fuse2(t.t2, g.g2)
        fused = self.decoder(f0, f1, f2, t.t2)
        return g, t, fused

    def forward(self, image: Tensor) -> FusedFeatures:
        return self.forward_full(image)[2]


def build_model(preset: str, fusion_mode: FusionMode,
                rng: np.random.Generator) -> tuple[SegNet, ModelConfig]:
    if preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[preset](fusion_mode)
    return SegNet(cfg, rng), cfg
