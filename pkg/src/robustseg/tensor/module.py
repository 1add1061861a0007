"""Parameter containers and the handful of layers the models need."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..errors import ContractError, DimensionError
from . import functional as F
from .core import Parameter, Tensor


class Module:
    """Walks attributes in definition order to find parameters and

    sub-modules; ``BatchNorm2d`` additionally exposes its running statistics as
    buffers so they travel with :meth:`state_dict`.
    """

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, "Module", str]]:
        """Yields (qualified name, owner, attribute) for non-trainable state."""
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")
        for attr in getattr(self, "_buffer_names", ()):
            yield f"{prefix}{attr}", self, attr

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, owner, attr in self.named_buffers():
            out[name] = owner.get_buffer(attr)
        return out

    def load_state_dict(self, state, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = {name: (owner, attr) for name, owner, attr in self.named_buffers()}
        missing = [k for k in list(params) + list(buffers) if k not in state]
        if strict and missing:
            raise ContractError(f"state dict is missing {missing[:5]}")
        for name, p in params.items():
            if name in state:
                arr = np.asarray(state[name], dtype=np.float32)
                if arr.shape != p.shape:
                    raise DimensionError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
                p.data = arr.copy()
        for name, (owner, attr) in buffers.items():
            if name in state:
                owner.set_buffer(attr, np.asarray(state[name], dtype=np.float32))

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
            if not flag:
                p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(_uniform(rng, (n_in, n_out), n_in))
        self.bias = Parameter(_uniform(rng, (n_out,), n_in)) if bias else None

    def __call__(self, x) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, pad: int = 0,
                 stride: int = 1):
        fan_in = c_in * k * k
        self.weight = Parameter(_uniform(rng, (c_out, c_in, k, k), fan_in))
        self.bias = Parameter(_uniform(rng, (c_out,), fan_in))
        self.pad = pad
        self.stride = stride

    def __call__(self, x) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, pad=self.pad, stride=self.stride)


class ConvTranspose2x2(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        fan_in = c_in
        self.weight = Parameter(_uniform(rng, (c_in, c_out, 2, 2), fan_in))
        self.bias = Parameter(_uniform(rng, (c_out,), fan_in))

    def __call__(self, x) -> Tensor:
        return F.transposed_conv2d(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim, np.float32))
        self.beta = Parameter(np.zeros(dim, np.float32))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class InstanceNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels, np.float32))
        self.beta = Parameter(np.zeros(channels, np.float32))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return F.instance_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var", "stats_initialized")

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Parameter(np.ones(channels, np.float32))
        self.beta = Parameter(np.zeros(channels, np.float32))
        self.eps = eps
        self.stats = F.BatchNormStats.create(channels, momentum)

    def get_buffer(self, attr: str) -> np.ndarray:
        if attr == "running_mean":
            return self.stats.mean
        if attr == "running_var":
            return self.stats.var
        return np.array([1.0 if self.stats.initialized else 0.0], np.float32)

    def set_buffer(self, attr: str, value: np.ndarray) -> None:
        if attr == "running_mean":
            self.stats.mean = value.copy()
        elif attr == "running_var":
            self.stats.var = value.copy()
        else:
            self.stats.initialized = bool(value.reshape(-1)[0] > 0.5)

    def __call__(self, x) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.stats, self.training, self.eps)
