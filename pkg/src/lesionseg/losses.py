"""Boundary-weighted IoU + BCE training loss with deep supervision."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .fusion import FusedFeatures
from .model import LossWeights
from .tensor import Tensor

PRED_CLAMP = 1e-7
IOU_EPS = 1e-8


def _box_mean_same(d: np.ndarray, k: int) -> np.ndarray:
    """Centered k x k mean with edge-replicated borders (separable)."""
    r = k // 2
    for axis in (-2, -1):
        pad = [(0, 0)] * d.ndim
        pad[axis] = (r, r)
        padded = np.pad(d, pad, mode="edge")
        win = np.lib.stride_tricks.sliding_window_view(padded, k, axis=axis)
        d = win.mean(axis=-1)
    return d


def boundary_weight_map(gt: Tensor, k: int = 15, lam: float = 5.0) -> Tensor:
    """Per-pixel loss weights, 1 far from mask boundaries and up to 1+lam
    next to them.

    The deviation of a local k x k mean from the mask itself is zero inside
    constant regions, so constant masks get a uniform map of ones.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"boundary kernel must be odd and positive, got {k}")
    pooled = _box_mean_same(gt.data, k)
    return Tensor(1.0 + lam * np.abs(pooled - gt.data))


def weighted_bce(pred: Tensor, gt: Tensor, w: Tensor) -> Tensor:
    """Pixel-weighted binary cross entropy, normalized by the weight mass."""
    p = T.clip(pred, PRED_CLAMP, 1.0 - PRED_CLAMP)
    ll = gt * T.log(p) + (1.0 - gt) * T.log(1.0 - p)
    return -(w * ll).sum() / w.sum()


def weighted_iou(pred: Tensor, gt: Tensor, w: Tensor) -> Tensor:
    """Soft weighted IoU loss; 0 for a perfect binary match (and for the
    all-empty pair, via the epsilon added to both ratio terms)."""
    inter = (w * pred * gt).sum()
    union = (w * (pred + gt - pred * gt)).sum()
    return 1.0 - (inter + IOU_EPS) / (union + IOU_EPS)


def segmentation_loss(pred: Tensor, gt: Tensor, w: Tensor) -> Tensor:
    return weighted_iou(pred, gt, w) + weighted_bce(pred, gt, w)


def total_loss(fused: FusedFeatures, gt: Tensor, weights: LossWeights,
               boundary_kernel: int = 15,
               boundary_lambda: float = 5.0) -> Tensor:
    """Deep-supervised loss over the three heads, sharing one weight map.

    The main decoded head carries ``alpha``, the coarse fusion head
    ``beta`` and the transformer head ``gamma``.
    """
    w = boundary_weight_map(gt, boundary_kernel, boundary_lambda)
    return (weights.alpha * segmentation_loss(fused.head_main, gt, w)
            + weights.beta * segmentation_loss(fused.head_f0, gt, w)
            + weights.gamma * segmentation_loss(fused.head_tfm, gt, w))
