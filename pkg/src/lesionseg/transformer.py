"""Patch-token transformer encoder with a progressive-upsampling decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cnn import ConfigError
from .nn import Conv2d, ConvBnRelu, LayerNorm, Linear, Module, Parameter
from .tensor import Tensor


@dataclass
class TransformerConfig:
    patch_size: int = 16
    embed_dim: int = 384
    depth: int = 8
    heads: int = 6
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.patch_size <= 0 or self.depth <= 0:
            raise ConfigError("patch_size and depth must be positive")

    @classmethod
    def toy(cls) -> "TransformerConfig":
        return cls(patch_size=16, embed_dim=64, depth=2, heads=4)


@dataclass
class TokenSequence:
    """A (B, N, D) token tensor plus the patch-grid it was cut from."""
    tokens: Tensor
    grid: tuple[int, int]

    def __post_init__(self):
        if self.tokens.shape[1] != self.grid[0] * self.grid[1]:
            raise ConfigError(
                f"token count {self.tokens.shape[1]} does not match grid "
                f"{self.grid}")


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention: softmax(q kT / sqrt(d)) v.

    Accepts any shared leading dims; the head dim is the last axis.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise T.DimensionError(
            f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    d = q.shape[-1]
    scores = T.matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1,
                                     k.ndim - 2)) * (1.0 / math.sqrt(d))
    return T.matmul(T.softmax_last_dim(scores), v)


class MultiHeadSelfAttention(Module):
    """h parallel self-attentions, concatenated and linearly re-projected."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = Linear(dim, dim, rng, std=0.02)
        self.k_proj = Linear(dim, dim, rng, std=0.02)
        self.v_proj = Linear(dim, dim, rng, std=0.02)
        self.out_proj = Linear(dim, dim, rng, std=0.02)
        self.last_attn: np.ndarray | None = None

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        return x.reshape(b, n, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        q = self._split(self.q_proj(x), b, n)
        k = self._split(self.k_proj(x), b, n)
        v = self._split(self.v_proj(x), b, n)
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) \
            * (1.0 / math.sqrt(self.head_dim))
        weights = T.softmax_last_dim(scores)
        self.last_attn = weights.data
        mixed = T.matmul(weights, v)
        merged = mixed.transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out_proj(merged)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng, std=0.02)
        self.fc2 = Linear(hidden, dim, rng, std=0.02)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-norm transformer block: x + msa(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float,
                 rng: np.random.Generator):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, int(round(dim * mlp_ratio)), rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchEmbed(Module):
    """Flatten non-overlapping SxS patches and map them to D-dim tokens."""

    def __init__(self, cfg: TransformerConfig, input_hw: tuple[int, int],
                 rng: np.random.Generator):
        super().__init__()
        s = cfg.patch_size
        h, w = input_hw
        if h % s or w % s:
            raise ConfigError(
                f"patch size {s} must divide input dims {h}x{w}")
        self.patch_size = s
        self.grid = (h // s, w // s)
        n = self.grid[0] * self.grid[1]
        self.proj = Linear(3 * s * s, cfg.embed_dim, rng, std=0.02)
        self.pos_embed = Parameter(
            rng.normal(0.0, 0.02, size=(n, cfg.embed_dim)))

    def forward(self, image: Tensor) -> TokenSequence:
        b, c, h, w = image.shape
        s = self.patch_size
        gh, gw = h // s, w // s
        if (gh, gw) != self.grid:
            raise ConfigError(
                f"input grid {(gh, gw)} does not match configured {self.grid}")
        patches = image.reshape(b, c, gh, s, gw, s) \
            .transpose(0, 2, 4, 1, 3, 5) \
            .reshape(b, gh * gw, c * s * s)
        tokens = self.proj(patches) + self.pos_embed
        return TokenSequence(tokens=tokens, grid=self.grid)


class TransformerEncoder(Module):
    """L pre-norm blocks followed by a final layer norm."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator):
        super().__init__()
        self.blocks = [EncoderBlock(cfg.embed_dim, cfg.heads, cfg.mlp_ratio,
                                    rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.embed_dim)

    def forward(self, seq: TokenSequence) -> TokenSequence:
        x = seq.tokens
        for block in self.blocks:
            x = block(x)
        return TokenSequence(tokens=self.norm(x), grid=seq.grid)


@dataclass
class TfmFeatures:
    """Decoded transformer maps: t0 at /16, t1 at /8, t2 at /4."""
    t0: Tensor
    t1: Tensor
    t2: Tensor


class PupDecoder(Module):
    """Progressive upsampling: reshape tokens to a map, then conv + 2x twice.

    The trunk halves its width per upsampling stage; per-scale 1x1
    projections match the paired CNN widths so downstream fusion sees
    equal channel counts from both branches.
    """

    def __init__(self, cfg: TransformerConfig,
                 out_channels: tuple[int, int, int],
                 rng: np.random.Generator):
        super().__init__()
        d = cfg.embed_dim
        self.embed_dim = d
        self.stage1 = ConvBnRelu(d, d // 2, 3, rng)
        self.stage2 = ConvBnRelu(d // 2, d // 4, 3, rng)
        self.proj0 = Conv2d(d, out_channels[0], 1, rng)
        self.proj1 = Conv2d(d // 2, out_channels[1], 1, rng)
        self.proj2 = Conv2d(d // 4, out_channels[2], 1, rng)

    def forward(self, seq: TokenSequence) -> TfmFeatures:
        b = seq.tokens.shape[0]
        gh, gw = seq.grid
        fmap = seq.tokens.reshape(b, gh, gw, self.embed_dim) \
            .transpose(0, 3, 1, 2)
        mid1 = T.bilinear_upsample2x(self.stage1(fmap))
        mid2 = T.bilinear_upsample2x(self.stage2(mid1))
        return TfmFeatures(t0=self.proj0(fmap), t1=self.proj1(mid1),
                           t2=self.proj2(mid2))


class TransformerBranch(Module):
    """Patch embedding, encoder and PUP decoder chained together."""

    def __init__(self, cfg: TransformerConfig, input_hw: tuple[int, int],
                 out_channels: tuple[int, int, int],
                 rng: np.random.Generator):
        super().__init__()
        self.patch_embed = PatchEmbed(cfg, input_hw, rng)
        self.encoder = TransformerEncoder(cfg, rng)
        self.decoder = PupDecoder(cfg, out_channels, rng)

    def forward(self, image: Tensor) -> TfmFeatures:
        return self.decoder(self.encoder(self.patch_embed(image)))
