"""Parameter containers and the small layer zoo the networks are built from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .functional import conv2d
from .tensor import Tensor, get_default_dtype, leaky_relu, matmul

LEAKY_SLOPE = 0.01


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())
    return Tensor(data, requires_grad=True)


class Module:
    """Base class; parameters are discovered by walking attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Linear(Module):
    """Fully connected layer acting on channel-first matrices: ``(in, P) -> (out, P)``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = _uniform(rng, (out_features, in_features), in_features)
        self.bias = _uniform(rng, (out_features, 1), in_features)

    def forward(self, x: Tensor) -> Tensor:
        return matmul(self.weight, x) + self.bias


class MLP(Module):
    """Stack of Linear layers with leaky-ReLU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = leaky_relu(x, LEAKY_SLOPE)
        return x


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel: int = 3):
        fan_in = in_channels * kernel * kernel
        self.weight = _uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        self.bias = _uniform(rng, (out_channels,), fan_in)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)


class ResBlock(Module):
    """conv-lrelu-conv with an identity skip, followed by leaky-ReLU."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv1 = Conv2d(channels, channels, rng)
        self.conv2 = Conv2d(channels, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.conv1(x), LEAKY_SLOPE)
        return leaky_relu(x + self.conv2(h), LEAKY_SLOPE)


class ResNet(Module):
    """Head conv, ``blocks`` residual blocks, tail conv.  Spatial extents are preserved."""

    def __init__(self, in_channels: int, width: int, out_channels: int, blocks: int, rng: np.random.Generator):
        self.head = Conv2d(in_channels, width, rng)
        self.blocks = [ResBlock(width, rng) for _ in range(blocks)]
        self.tail = Conv2d(width, out_channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.head(x), LEAKY_SLOPE)
        for block in self.blocks:
            h = block(h)
        return self.tail(h)
