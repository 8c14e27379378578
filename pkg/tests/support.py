"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from lesionseg.nn import Module
from lesionseg.tensor import backward


def fd_param_max_rel_err(loss_fn, params, rng: np.random.Generator,
                         n_coords: int = 50, eps: float = 1e-5) -> float:
    """Central-difference check of parameter gradients.

    ``loss_fn()`` must rebuild the graph from scratch and return the scalar
    loss Tensor; one backward pass is run here, then ``n_coords`` randomly
    chosen parameter coordinates are perturbed for finite differences.
    """
    for p in params:
        p.grad = None
    backward(loss_fn())
    worst = 0.0
    for _ in range(n_coords):
        p = params[int(rng.integers(len(params)))]
        flat = p.data.reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + eps
        hi = loss_fn().item()
        flat[i] = orig - eps
        lo = loss_fn().item()
        flat[i] = orig
        numeric = (hi - lo) / (2 * eps)
        analytic = p.grad.reshape(-1)[i]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


def zero_all_params(module: Module) -> None:
    for p in module.parameters():
        p.data[...] = 0.0
