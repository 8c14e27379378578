"""Dense float64 tensors with define-by-run reverse-mode autodiff.

Every value flowing through the network is a :class:`Tensor` wrapping a
row-major numpy float64 array. Operations record a closure holding the
data needed for their gradient rule; ``backward`` replays the recorded
graph once, in reverse topological order. The graph is rebuilt on every
forward pass and is confined to a single thread.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "NumericError",
    "matmul",
    "hadamard",
    "relu",
    "gelu",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "clip",
    "softmax_last_dim",
    "layer_norm",
    "batch_norm2d",
    "conv2d",
    "max_pool2d",
    "bilinear_upsample2x",
    "global_avg_pool",
    "concat",
    "concat_channels",
    "max_along",
    "backward",
    "grad_check",
]


class DimensionError(ValueError):
    """Raised when tensor shapes do not satisfy an operation's contract."""


class NumericError(ValueError):
    """Raised when an operation receives non-finite input it cannot handle."""


class Tensor:
    """N-dimensional float64 array plus optional gradient buffer.

    ``requires_grad`` marks leaves that should receive gradients;
    results of operations require grad whenever any input does.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return _add(self, _as_tensor(other))

    def __radd__(self, other):
        return _add(_as_tensor(other), self)

    def __sub__(self, other):
        return _sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return _sub(_as_tensor(other), self)

    def __mul__(self, other):
        return _mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return _mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return _div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return _div(_as_tensor(other), self)

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        y = self.data ** p

        def back(g):
            return (g * p * self.data ** (p - 1),)

        return _make(y, (self,), back)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape manipulation --------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return _make(self.data.reshape(shape), (self,),
                     lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return _make(self.data.transpose(axes), (self,),
                     lambda g: (g.transpose(inv),))

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        y = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def back(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).copy(),)

        return _make(y, (self,), back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else _axis_count(self.data.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _axis_count(shape, axis):
    if isinstance(axis, int):
        axis = (axis,)
    return int(np.prod([shape[a] for a in axis]))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, back) -> Tensor:
    """Wrap an op result, recording the gradient rule if any input needs it."""
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents

        def run(g, flow):
            for p, gp in zip(parents, back(g)):
                if p.requires_grad and gp is not None:
                    prev = flow.get(id(p))
                    # never mutate a stored buffer in place: rules may alias g
                    flow[id(p)] = gp if prev is None else prev + gp

        out._backward = run
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _add(a: Tensor, b: Tensor) -> Tensor:
    na, nb = a.requires_grad, b.requires_grad
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape) if na else None,
                            _unbroadcast(g, b.data.shape) if nb else None))


def _sub(a: Tensor, b: Tensor) -> Tensor:
    na, nb = a.requires_grad, b.requires_grad
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape) if na else None,
                            _unbroadcast(-g, b.data.shape) if nb else None))


def _mul(a: Tensor, b: Tensor) -> Tensor:
    na, nb = a.requires_grad, b.requires_grad
    return _make(a.data * b.data, (a, b),
                 lambda g: (
                     _unbroadcast(g * b.data, a.data.shape) if na else None,
                     _unbroadcast(g * a.data, b.data.shape) if nb else None))


def _div(a: Tensor, b: Tensor) -> Tensor:
    na, nb = a.requires_grad, b.requires_grad
    return _make(a.data / b.data, (a, b),
                 lambda g: (
                     _unbroadcast(g / b.data, a.data.shape) if na else None,
                     _unbroadcast(-g * a.data / (b.data * b.data),
                                  b.data.shape) if nb else None))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a @ b`` with broadcast leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    y = np.matmul(a.data, b.data)
    na, nb = a.requires_grad, b.requires_grad

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)),
                          a.data.shape) if na else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g),
                          b.data.shape) if nb else None
        return ga, gb

    return _make(y, (a, b), back)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two identically shaped tensors."""
    if a.shape != b.shape:
        raise DimensionError(
            f"hadamard needs identical shapes, got {a.shape} and {b.shape}")
    return _mul(a, b)


# -- elementwise nonlinearities ----------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)  # tanh-approximation constant
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    u = _GELU_C * (x.data + _GELU_A * x.data ** 3)
    t = np.tanh(u)
    y = 0.5 * x.data * (1.0 + t)

    def back(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x.data ** 2)
        dy = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du
        return (g * dy,)

    return _make(y, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic; output strictly inside (0, 1)."""
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    y = np.clip(y, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))

    def back(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), back)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return _make(y, (x,), lambda g: (g * 0.5 / y,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to ``[lo, hi]``; gradient passes through the interior."""
    mask = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


# -- structured ops -----------------------------------------------------

def softmax_last_dim(x: Tensor) -> Tensor:
    """Max-stabilized softmax along the last dimension."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax needs a non-empty last dimension")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax received non-finite input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _make(y, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               eps: float = 1e-6) -> Tensor:
    """Normalize the last dimension to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm affine params must have shape ({d},)")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return xc * inv * gamma + beta


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (B, H, W).

    Training mode normalizes with batch statistics and updates the running
    buffers in place (running variance uses the unbiased estimate); eval
    mode normalizes with the running buffers.
    """
    if x.ndim != 4:
        raise DimensionError(f"batch_norm2d expects BCHW input, got {x.shape}")
    c = x.shape[1]
    gg = gamma.reshape(1, c, 1, 1)
    bb = beta.reshape(1, c, 1, 1)
    if training:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if n < 2:
            raise DimensionError(
                "batch_norm2d training mode needs B*H*W >= 2 samples per channel")
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(c) * (n / (n - 1))
        inv = (var + eps) ** -0.5
        return xc * inv * gg + bb
    rm = Tensor(running_mean.reshape(1, c, 1, 1))
    rv = Tensor(running_var.reshape(1, c, 1, 1))
    return (x - rm) * (rv + eps) ** -0.5 * gg + bb


def _pad_bchw(d: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return d
    return np.pad(d, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                  constant_values=value)


def _im2col(xpad: np.ndarray, kh: int, kw: int, stride: int,
            oh: int, ow: int) -> np.ndarray:
    """Contiguous (B, C*kh*kw, oh*ow) patch matrix."""
    b, c = xpad.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow))
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki, kj] = xpad[:, :, ki:ki + stride * oh:stride,
                                      kj:kj + stride * ow:stride]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(gcols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int,
            oh: int, ow: int) -> np.ndarray:
    """Transpose of _im2col: scatter-add patches back onto the padded grid."""
    b, c, hp, wp = shape
    g6 = gcols.reshape(b, c, kh, kw, oh, ow)
    gxpad = np.zeros(shape)
    for ki in range(kh):
        for kj in range(kw):
            gxpad[:, :, ki:ki + stride * oh:stride,
                  kj:kj + stride * ow:stride] += g6[:, :, ki, kj]
    return gxpad


def conv2d(x: Tensor, weight: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation.

    Args:
        x: input of shape (B, Cin, H, W).
        weight: kernel of shape (Cout, Cin, kh, kw).
        bias: per-output-channel bias of shape (Cout,).
        stride: spatial stride, same in both directions.
        padding: symmetric zero padding.

    Output spatial size is ``(H + 2*padding - kh) // stride + 1`` and
    analogously for width.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(
            f"conv2d expects BCHW input and OIHW weight, got {x.shape} and "
            f"{weight.shape}")
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xpad = _pad_bchw(x.data, padding)
    cols = _im2col(xpad, kh, kw, stride, oh, ow)
    w2d = weight.data.reshape(cout, cin * kh * kw)
    y = np.matmul(w2d, cols).reshape(b, cout, oh, ow)
    y += bias.data.reshape(1, cout, 1, 1)
    need_x = x.requires_grad

    def back(g):
        g3 = g.reshape(b, cout, oh * ow)
        gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0) \
            .reshape(weight.data.shape)
        gb = g.sum(axis=(0, 2, 3))
        if not need_x:
            return None, gw, gb
        gcols = np.matmul(w2d.T, g3)
        gxpad = _col2im(gcols, xpad.shape, kh, kw, stride, oh, ow)
        gx = gxpad[:, :, padding:padding + h, padding:padding + w] \
            if padding else gxpad
        return gx, gw, gb

    return _make(y, (x, weight, bias), back)


def max_pool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling; padded cells never win (padding value is -inf)."""
    if x.ndim != 4:
        raise DimensionError(f"max_pool2d expects BCHW input, got {x.shape}")
    b, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if kernel > hp or kernel > wp:
        raise DimensionError(
            f"max_pool2d kernel {kernel} larger than padded input ({hp}x{wp})")
    oh = (hp - kernel) // stride + 1
    ow = (wp - kernel) // stride + 1
    xpad = _pad_bchw(x.data, padding, value=-np.inf)
    flat = np.stack(
        [xpad[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
         for ki in range(kernel) for kj in range(kernel)], axis=2)
    idx = flat.argmax(axis=2)
    y = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def back(g):
        gxpad = np.zeros((b, c, hp, wp))
        ki, kj = np.divmod(idx, kernel)
        ob, oc = np.indices((b, c))[:, :, :, None, None]
        orow = np.arange(oh)[None, None, :, None] * stride + ki
        ocol = np.arange(ow)[None, None, None, :] * stride + kj
        np.add.at(gxpad, (ob, oc, orow, ocol), g)
        return (gxpad[:, :, padding:padding + h, padding:padding + w]
                if padding else gxpad,)

    return _make(y, (x,), back)


def _up2_axis(d: np.ndarray, axis: int) -> np.ndarray:
    """Double one axis by 2x bilinear interpolation, align_corners=False.

    Even outputs blend each cell with its predecessor (0.75/0.25), odd
    outputs with its successor; borders replicate.
    """
    d = np.moveaxis(d, axis, -1)
    n = d.shape[-1]
    out = np.empty(d.shape[:-1] + (2 * n,))
    prev = np.concatenate([d[..., :1], d[..., :-1]], axis=-1)
    nxt = np.concatenate([d[..., 1:], d[..., -1:]], axis=-1)
    # d + 0.25(neighbor - d) keeps constant regions bitwise constant
    out[..., 0::2] = d + 0.25 * (prev - d)
    out[..., 1::2] = d + 0.25 * (nxt - d)
    return np.moveaxis(out, -1, axis)


def _up2_axis_T(g: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of _up2_axis: fold gradients of 2n outputs back onto n."""
    g = np.moveaxis(g, axis, -1)
    even, odd = g[..., 0::2], g[..., 1::2]
    gx = 0.75 * (even + odd)
    gx[..., 0] += 0.25 * even[..., 0]      # border replication of out[0]
    gx[..., -1] += 0.25 * odd[..., -1]     # ... and of out[-1]
    gx[..., :-1] += 0.25 * even[..., 1:]   # each cell feeds the next even
    gx[..., 1:] += 0.25 * odd[..., :-1]    # ... and the previous odd
    return np.moveaxis(gx, -1, axis)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double H and W by bilinear interpolation (align_corners=False)."""
    if x.ndim != 4:
        raise DimensionError(
            f"bilinear_upsample2x expects BCHW input, got {x.shape}")
    y = _up2_axis(_up2_axis(x.data, 2), 3)

    def back(g):
        return (_up2_axis_T(_up2_axis_T(g, 3), 2),)

    return _make(y, (x,), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial dimensions: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise DimensionError(
            f"global_avg_pool expects BCHW input, got {x.shape}")
    return x.mean(axis=(2, 3))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate tensors along ``axis``."""
    xs = [_as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(xs)))

    return _make(np.concatenate([x.data for x in xs], axis=axis),
                 tuple(xs), back)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate BCHW feature maps along the channel axis."""
    base = xs[0].shape
    for x in xs:
        if x.ndim != 4 or x.shape[0] != base[0] or x.shape[2:] != base[2:]:
            raise DimensionError(
                "concat_channels needs matching batch/spatial dims, got "
                + str([tuple(x.shape) for x in xs]))
    return concat(xs, axis=1)


def max_along(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient routes to the first maximal element."""
    idx = x.data.argmax(axis=axis)
    y = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis)
    if not keepdims:
        y = np.squeeze(y, axis)

    def back(g):
        gx = np.zeros_like(x.data)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), gg, axis)
        return (gx,)

    return _make(y, (x,), back)


# -- reverse pass --------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    """Operations in forward order; each recorded node appears exactly once."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires-grad tensor reachable from ``loss``.

    Repeated calls without zeroing gradients accumulate.
    """
    if loss.size != 1:
        raise DimensionError(
            f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not belong to a recorded graph")
    order = _topo_order(loss)
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is not None:
            node._backward(g, flow)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               eps: float = 1e-5) -> float:
    """Compare autodiff gradients of ``f`` at ``x`` with central differences.

    Returns the maximum over coordinates of ``|a - n| / max(|a|, |n|, 1e-8)``
    where ``a`` is the reverse-mode gradient and ``n`` the numeric one.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    backward(out)
    analytic = probe.grad.copy()

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(probe.data)).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(probe.data)).data)
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
