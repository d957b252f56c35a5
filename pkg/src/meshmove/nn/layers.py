"""Dense and convolutional layers backed by a ParameterStore."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParameterStore


class Linear:
    """``y = x W + b``; LeCun-normal init (suits SELU) or all zeros."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, zero: bool = False):
        scale = 0.0 if zero else 1.0 / np.sqrt(n_in)
        self.weight = store.add(f"{name}.weight", rng.normal(0.0, 1.0, (n_in, n_out)) * scale)
        self.bias = store.add(f"{name}.bias", np.zeros(n_out))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)


class MLP:
    """Stack of Linear layers with SELU between them (none after the last)."""

    def __init__(self, store: ParameterStore, name: str, sizes, rng: np.random.Generator, zero_last: bool = False):
        self.layers = [
            Linear(store, f"{name}.{k}", a, b, rng, zero=zero_last and k == len(sizes) - 2)
            for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def __call__(self, x):
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = T.selu(x)
        return x


class Conv2d:
    def __init__(self, store: ParameterStore, name: str, c_in: int, c_out: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0):
        fan_in = c_in * kernel * kernel
        self.weight = store.add(f"{name}.weight", rng.normal(0.0, 1.0 / np.sqrt(fan_in), (c_out, c_in, kernel, kernel)))
        self.bias = store.add(f"{name}.bias", np.zeros(c_out))
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
