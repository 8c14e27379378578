"""Naive scalar reference implementations used as independent oracles.

Everything here is written with plain loops over numpy arrays and never
calls into the autodiff engine or the model code, so equivalence checks
compare two genuinely separate routes.
"""

from __future__ import annotations

import math

import numpy as np


def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                 stride: int = 1, padding: int = 0) -> np.ndarray:
    """Six-nested-loop cross-correlation over a BCHW input."""
    bs, cin, h, ww = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (ww + 2 * padding - kw) // stride + 1
    out = np.zeros((bs, cout, oh, ow))
    for n in range(bs):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (xp[n, ci, i * stride + ki,
                                           j * stride + kj]
                                        * w[co, ci, ki, kj])
                    out[n, co, i, j] = acc + b[co]
    return out


def naive_attention(q: np.ndarray, k: np.ndarray,
                    v: np.ndarray) -> np.ndarray:
    """Scalar scaled-dot-product attention for one batch element set.

    q: (B, N, d), k/v: (B, M, d). Returns (B, N, d).
    """
    bsz, n, d = q.shape
    m = k.shape[1]
    out = np.zeros((bsz, n, d))
    for bi in range(bsz):
        for i in range(n):
            scores = []
            for j in range(m):
                s = 0.0
                for c in range(d):
                    s += q[bi, i, c] * k[bi, j, c]
                scores.append(s / math.sqrt(d))
            mx = max(scores)
            weights = [math.exp(s - mx) for s in scores]
            z = sum(weights)
            for c in range(d):
                acc = 0.0
                for j in range(m):
                    acc += (weights[j] / z) * v[bi, j, c]
                out[bi, i, c] = acc
    return out


def naive_bilinear_upsample2x(x: np.ndarray) -> np.ndarray:
    """Direct per-pixel 2x bilinear interpolation, align_corners=False."""
    b, c, h, w = x.shape
    out = np.zeros((b, c, 2 * h, 2 * w))
    for n in range(b):
        for ch in range(c):
            for i in range(2 * h):
                for j in range(2 * w):
                    sy = (i + 0.5) / 2.0 - 0.5
                    sx = (j + 0.5) / 2.0 - 0.5
                    y0 = min(max(int(math.floor(sy)), 0), h - 1)
                    x0 = min(max(int(math.floor(sx)), 0), w - 1)
                    y1 = min(y0 + 1, h - 1)
                    x1 = min(x0 + 1, w - 1)
                    fy = 0.0 if sy < 0 else min(sy - math.floor(sy), 1.0)
                    fx = 0.0 if sx < 0 else min(sx - math.floor(sx), 1.0)
                    top = x[n, ch, y0, x0] * (1 - fx) + x[n, ch, y0, x1] * fx
                    bot = x[n, ch, y1, x0] * (1 - fx) + x[n, ch, y1, x1] * fx
                    out[n, ch, i, j] = top * (1 - fy) + bot * fy
    return out


def naive_mean_pool_same(x: np.ndarray, k: int) -> np.ndarray:
    """Centered k x k mean pool, stride 1, edge-replicated borders."""
    h, w = x.shape
    r = k // 2
    xp = np.pad(x, r, mode="edge")
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(k):
                for dj in range(k):
                    acc += xp[i + di, j + dj]
            out[i, j] = acc / (k * k)
    return out


def enumerate_confusion(pred: np.ndarray, gt: np.ndarray,
                        threshold: float = 0.5) -> tuple[int, int, int, int]:
    """Pixel-by-pixel confusion counts (tp, fp, fn, tn) by explicit loop."""
    tp = fp = fn = tn = 0
    for p, g in zip(pred.reshape(-1), gt.reshape(-1)):
        pos = p >= threshold
        if pos and g >= 0.5:
            tp += 1
        elif pos:
            fp += 1
        elif g >= 0.5:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn
