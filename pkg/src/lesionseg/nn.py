"""Minimal layer system over the autodiff tensors.

Mirrors the familiar Module/Parameter pattern: attributes that are
Parameters or Modules are discovered in definition order, which keeps
checkpoint layouts stable across runs.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor; always requires grad."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float64)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, child in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(child, Parameter):
                yield full, child
            elif isinstance(child, Module):
                yield from child.named_parameters(f"{full}.")
            elif isinstance(child, (list, tuple)):
                for i, item in enumerate(child):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield f"{prefix}{name}", buf
        for name, child in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(child, Module):
                yield from child.named_buffers(f"{full}.")
            elif isinstance(child, (list, tuple)):
                for i, item in enumerate(child):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in vars(self).values():
            if isinstance(child, Module):
                yield from child.modules()
            elif isinstance(child, (list, tuple)):
                for item in child:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def __getattr__(self, name):
        bufs = self.__dict__.get("_buffers")
        if bufs is not None and name in bufs:
            return bufs[name]
        raise AttributeError(name)


def kaiming_normal(rng: np.random.Generator, shape: tuple,
                   fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Linear(Module):
    """Affine map y = x @ W + b with W of shape (in, out)."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, std: float | None = None):
        super().__init__()
        if std is None:
            w = kaiming_normal(rng, (in_features, out_features), in_features)
        else:
            w = rng.normal(0.0, std, size=(in_features, out_features))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(kaiming_normal(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias,
                        stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1,
                 eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm2d(x, self.gamma, self.beta,
                              self._buffers["running_mean"],
                              self._buffers["running_var"],
                              training=self.training,
                              momentum=self.momentum, eps=self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Sequential(Module):
    def __init__(self, *mods: Module):
        super().__init__()
        self.items = list(mods)

    def forward(self, x: Tensor) -> Tensor:
        for m in self.items:
            x = m(x)
        return x


class ConvBnRelu(Module):
    """3x3-style conv followed by batch norm and relu."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None):
        super().__init__()
        if padding is None:
            padding = kernel_size // 2
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng,
                           stride=stride, padding=padding)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(self.conv(x)))
