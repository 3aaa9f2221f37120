"""Parameter containers and small layers."""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor, current_dtype


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.array(data, dtype=current_dtype()), requires_grad=True)


class Module:
    """Holds Parameters and sub-Modules as attributes (or lists of them)."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{key}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.data.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return (np.clip(rng.standard_normal(shape), -2.0, 2.0) * std).astype(np.float32)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator, std: float = 0.02, bias: bool = True):
        self.weight = Parameter(trunc_normal(rng, (din, dout), std))
        self.bias = Parameter(np.zeros(dout)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-6):
        self.weight = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding=0, pad_mode="zeros", std=None):
        std = math.sqrt(2.0 / (cin * k * k)) if std is None else std
        self.weight = Parameter(trunc_normal(rng, (cout, cin, k, k), std))
        self.bias = Parameter(np.zeros(cout))
        self.stride, self.padding, self.pad_mode = stride, padding, pad_mode

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.pad_mode)


class DepthwiseConv2d(Module):
    def __init__(self, c, k, rng, pad_mode="zeros", std=None):
        std = math.sqrt(1.0 / (k * k)) if std is None else std
        self.weight = Parameter(trunc_normal(rng, (c, k, k), std))
        self.bias = Parameter(np.zeros(c))
        self.padding = k // 2
        self.pad_mode = pad_mode

    def forward(self, x):
        return ops.depthwise_conv2d(x, self.weight, self.bias, self.padding, self.pad_mode)
