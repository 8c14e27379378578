"""Built-in verification: gradient checks, oracle equivalence, shapes.

Run via `lesionseg selftest`; every check prints one line and the command
exits nonzero if any of them fails. The heavier acceptance suite lives in
the test tree, but this covers the core correctness story without pytest.
"""

from __future__ import annotations

import numpy as np

from . import reference, tensor as T
from .data import derive_rng, synth_dataset
from .losses import total_loss
from .model import SegNet, toy_config
from .tensor import Tensor, backward, grad_check
from .transformer import attention


def _check(name: str, ok: bool, detail: str = "") -> bool:
    status = "ok" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))
    return ok


def run_gradient_checks(rng: np.random.Generator) -> bool:
    """Central-difference checks for every differentiable operation."""
    ok = True
    x = Tensor(rng.standard_normal((4, 5)))
    proj = Tensor(rng.standard_normal((4, 5)))
    elementwise = {
        "relu": lambda t: T.relu(t).sum(),
        "gelu": lambda t: T.gelu(t).sum(),
        "sigmoid": lambda t: T.sigmoid(t).sum(),
        "exp": lambda t: T.exp(t * 0.3).sum(),
        "softmax": lambda t: (T.softmax_last_dim(t) * proj).sum(),
    }
    for name, fn in elementwise.items():
        err = grad_check(fn, x)
        ok &= _check(f"grad {name}", err < 1e-4, f"rel err {err:.2e}")

    b = Tensor(rng.standard_normal((5, 3)))
    err = grad_check(lambda t: T.matmul(t, b).sum(), x)
    ok &= _check("grad matmul", err < 1e-4, f"rel err {err:.2e}")

    img = Tensor(rng.standard_normal((2, 3, 6, 6)))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
    bias = Tensor(rng.standard_normal(4), requires_grad=True)
    err = grad_check(lambda t: T.conv2d(t, w, bias, 1, 1).sum() * 0.1, img)
    ok &= _check("grad conv2d", err < 1e-3, f"rel err {err:.2e}")

    err = grad_check(lambda t: T.bilinear_upsample2x(t).sum(),
                     Tensor(rng.standard_normal((1, 2, 4, 4))))
    ok &= _check("grad upsample", err < 1e-4, f"rel err {err:.2e}")
    return ok


def run_oracle_checks(rng: np.random.Generator) -> bool:
    ok = True
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    fast = T.conv2d(Tensor(x), Tensor(w), Tensor(b), 1, 1).data
    slow = reference.naive_conv2d(x, w, b, 1, 1)
    diff = float(np.abs(fast - slow).max())
    ok &= _check("conv2d vs naive loops", diff < 1e-10, f"max diff {diff:.2e}")

    q, k, v = (rng.standard_normal((1, 3, 4)) for _ in range(3))
    fast = attention(Tensor(q), Tensor(k), Tensor(v)).data
    slow = reference.naive_attention(q, k, v)
    diff = float(np.abs(fast - slow).max())
    ok &= _check("attention vs scalar formula", diff < 1e-12,
                 f"max diff {diff:.2e}")

    x = rng.standard_normal((1, 2, 5, 7))
    fast = T.bilinear_upsample2x(Tensor(x)).data
    slow = reference.naive_bilinear_upsample2x(x)
    diff = float(np.abs(fast - slow).max())
    ok &= _check("upsample vs direct formula", diff < 1e-12,
                 f"max diff {diff:.2e}")
    return ok


def run_shape_checks() -> bool:
    ok = True
    rng = derive_rng(7, "selftest-shapes")
    model = SegNet(toy_config(input_hw=(32, 32)), rng)
    model.eval()
    g, t, fused = model.forward_full(Tensor(rng.standard_normal((1, 3, 32, 32))))
    expect = {
        "g0": (g.g0.shape, (1, 64, 2, 2)),
        "g1": (g.g1.shape, (1, 32, 4, 4)),
        "g2": (g.g2.shape, (1, 16, 8, 8)),
        "t0": (t.t0.shape, (1, 64, 2, 2)),
        "t1": (t.t1.shape, (1, 32, 4, 4)),
        "t2": (t.t2.shape, (1, 16, 8, 8)),
        "fhat2": (fused.fhat2.shape, (1, 16, 8, 8)),
        "head_main": (fused.head_main.shape, (1, 1, 32, 32)),
        "head_tfm": (fused.head_tfm.shape, (1, 1, 32, 32)),
        "head_f0": (fused.head_f0.shape, (1, 1, 32, 32)),
    }
    for name, (got, want) in expect.items():
        ok &= _check(f"shape {name}", got == want, f"{got} vs {want}")
    for name, head in (("head_main", fused.head_main),
                       ("head_tfm", fused.head_tfm),
                       ("head_f0", fused.head_f0)):
        inside = bool((head.data > 0).all() and (head.data < 1).all())
        ok &= _check(f"{name} in (0,1)", inside)
    return ok


def run_model_grad_check(n_coords: int = 40) -> bool:
    """Finite differences on a random subsample of model parameters."""
    rng = derive_rng(11, "selftest-grads")
    model = SegNet(toy_config(input_hw=(32, 32)), rng)
    model.train()
    data = synth_dataset(2, seed=5, target_hw=(32, 32))
    images = Tensor(np.stack([s.image.data for s in data]))
    masks = Tensor(np.stack([s.mask.data for s in data]))
    cfg = model.cfg

    def loss_value() -> float:
        fused = model(images)
        return total_loss(fused, masks, cfg.loss, boundary_kernel=5,
                          boundary_lambda=cfg.boundary_lambda).item()

    model.zero_grad()
    fused = model(images)
    loss = total_loss(fused, masks, cfg.loss, boundary_kernel=5,
                      boundary_lambda=cfg.boundary_lambda)
    backward(loss)

    named = list(model.named_parameters())
    worst = 0.0
    eps = 1e-5
    for _ in range(n_coords):
        pname, p = named[int(rng.integers(len(named)))]
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + eps
        hi = loss_value()
        flat[i] = orig - eps
        lo = loss_value()
        flat[i] = orig
        numeric = (hi - lo) / (2 * eps)
        analytic = gflat[i]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return _check("model parameter gradients", worst < 1e-3,
                  f"max rel err {worst:.2e} over {n_coords} coords")


def run_all() -> bool:
    rng = np.random.default_rng(1234)
    ok = run_gradient_checks(rng)
    ok &= run_oracle_checks(rng)
    ok &= run_shape_checks()
    ok &= run_model_grad_check()
    print("selftest:", "all checks passed" if ok else "FAILURES above")
    return ok
