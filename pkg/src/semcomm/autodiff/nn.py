"""Module containers and the layers both networks are assembled from."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that is trained."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Minimal module tree: parameters, buffers and children are discovered
    from instance attributes in definition order."""

    def __init__(self):
        self.training = True
        self._buffers: OrderedDict[str, np.ndarray] = OrderedDict()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, b in self.named_buffers():
            state[name] = b
        return state

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in list(params) + list(buffers) if k not in state]
        unexpected = [k for k in state if k not in params and k not in buffers]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in params.items():
            if name in state:
                value = np.asarray(state[name])
                if value.shape != p.shape:
                    raise KeyError(f"{name}: shape {value.shape} != {p.shape}")
                p.data = value.astype(p.dtype, copy=True)
        for name, b in buffers.items():
            if name in state:
                b[...] = state[name]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = 2.0) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(np.float32)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int, stride: int = 1,
                 pad: int | None = None, dilation: int = 1, bias: bool = True):
        super().__init__()
        self.stride, self.dilation = stride, dilation
        self.pad = dilation * (k - 1) // 2 if pad is None else pad
        self.weight = Parameter(kaiming(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.dilation)


class ConvTranspose2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int, stride: int = 1, pad: int = 0):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.weight = Parameter(kaiming(rng, (c_in, c_out, k, k), c_in * k * k / (stride * stride)))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        y = ops.conv_transpose2d(x, self.weight, self.stride, self.pad)
        shape = (1, -1, 1, 1) if y.ndim == 4 else (-1, 1, 1)
        return y + self.bias.reshape(shape)


class Norm2d(Module):
    """Batch norm (running statistics, momentum 0.1) or instance norm."""

    def __init__(self, channels: int, kind: str = "batch", eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.kind, self.eps, self.momentum = kind, eps, momentum
        self.weight = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        if kind == "batch":
            self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
            self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return ops.normalize(x, self.kind, self.weight, self.bias, self.eps,
                             self._buffers.get("running_mean"), self._buffers.get("running_var"),
                             training=self.training, momentum=self.momentum)


class ConvNormAct(Module):
    """conv -> optional norm -> optional activation; the unit PTQ folds and quantizes."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int, stride: int = 1,
                 dilation: int = 1, norm: str | None = "batch", act: str | None = "relu",
                 pad: int | None = None):
        super().__init__()
        self.conv = Conv2d(rng, c_in, c_out, k, stride, pad, dilation, bias=norm is None)
        self.norm = Norm2d(c_out, norm) if norm else None
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        y = self.conv(x)
        if self.norm is not None:
            y = self.norm(y)
        if self.act == "relu":
            y = y.relu()
        elif self.act == "leaky":
            y = y.leaky_relu(0.2)
        elif self.act is not None:
            y = ops.activate(y, self.act)
        return y


def set_all_parameters(module: Module, value: float) -> None:
    """Overwrite every parameter (weights, biases, affine norm params) with ``value``."""
    for p in module.parameters():
        p.data = np.full_like(p.data, value)


def cast_module(module: Module, dtype) -> Module:
    """Convert parameters and buffers in place (float64 for gradient checks)."""
    for p in module.parameters():
        p.data = p.data.astype(dtype)
    for m in module.modules():
        for k, v in list(m._buffers.items()):
            m._buffers[k] = v.astype(dtype)
    return module
