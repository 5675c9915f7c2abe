"""Small layer library over the autodiff ops.

Each layer owns named parameters (``Tensor`` with ``requires_grad``) and, for
batch normalisation, running-statistic buffers. Initialisation draws from a
random stream derived from ``(seed, layer name)``, so two models that share a
layer name and shape start from identical weights.
"""
from __future__ import annotations

import zlib
from typing import Iterator, Optional

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor
from ..errors import ContractViolation

DTYPE = np.float32


def layer_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, 1, zlib.crc32(name.encode())])


class Module:
    """Container with recursive parameter / buffer naming."""

    training = True

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for k, v in vars(self).items():
            if isinstance(v, Module):
                yield k, v
            elif isinstance(v, (list, tuple)):
                for i, m in enumerate(v):
                    if isinstance(m, Module):
                        yield f"{k}.{i}", m

    def own_parameters(self) -> dict[str, Tensor]:
        return {}

    def own_buffers(self) -> dict[str, np.ndarray]:
        return {}

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self.own_parameters().items()}
        for name, child in self.children():
            out.update(child.parameters(f"{prefix}{name}."))
        return out

    def buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.own_buffers().items()}
        for name, child in self.children():
            out.update(child.buffers(f"{prefix}{name}."))
        return out

    def load_buffers(self, arrays: dict, prefix: str = "") -> None:
        for k in self.own_buffers():
            self.set_buffer(k, arrays[prefix + k])
        for name, child in self.children():
            child.load_buffers(arrays, f"{prefix}{name}.")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Conv2d(Module):
    def __init__(self, name: str, cin: int, cout: int, k: int = 3, stride: int = 1,
                 bias: bool = True, seed: int = 0):
        self.name, self.cin, self.cout, self.k, self.stride = name, cin, cout, k, stride
        bound = np.sqrt(6.0 / (cin * k * k))  # He-uniform for ReLU stacks
        rng = layer_rng(seed, name)
        self.weight = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)).astype(DTYPE),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, DTYPE), requires_grad=True) if bias else None

    def own_parameters(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cin:
            raise ContractViolation(f"{self.name}: expected {self.cin} input channels, got {x.shape[1]}")
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride)


class BatchNorm2d(Module):
    def __init__(self, name: str, channels: int):
        self.name = name
        self.gamma = Tensor(np.ones(channels, DTYPE), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, DTYPE), requires_grad=True)
        self.state = ops.BatchNormState(channels, dtype=DTYPE)

    def own_parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def own_buffers(self):
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}

    def set_buffer(self, name, value):
        setattr(self.state, name, np.array(value, dtype=DTYPE))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.state, "train" if self.training else "eval")


class ConvBNReLU(Module):
    def __init__(self, name: str, cin: int, cout: int, k: int = 3, stride: int = 1, seed: int = 0):
        self.conv = Conv2d(f"{name}.conv", cin, cout, k, stride, bias=False, seed=seed)
        self.bn = BatchNorm2d(f"{name}.bn", cout)

    @property
    def cout(self) -> int:
        return self.conv.cout

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class Sequential(Module):
    def __init__(self, layers):
        self.layers = list(layers)

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class LayerNorm(Module):
    """Normalisation over every non-batch axis (``C, H, W``)."""

    def __init__(self, name: str, shape: tuple[int, ...]):
        self.name = name
        self.shape = tuple(shape)
        self.gamma = Tensor(np.ones(self.shape, DTYPE), requires_grad=True)
        self.beta = Tensor(np.zeros(self.shape, DTYPE), requires_grad=True)

    def own_parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.gamma, self.beta, n_axes=len(self.shape))


def conv_out(n: int, stride: int = 2) -> int:
    """Output length of a "same"-padded strided conv."""
    return -(-n // stride)
