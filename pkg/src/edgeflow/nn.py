"""Layers built on the autodiff engine: linear maps, tanh MLPs, a GRU cell."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """Container whose parameters are discovered by attribute walk, in definition order."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.weight = Tensor(glorot_uniform(rng, fan_in, fan_out), requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class MLP(Module):
    """Linear layers with tanh between them (none after the last)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x) -> Tensor:
        for layer in self.layers[:-1]:
            x = ad.tanh(layer(x))
        return self.layers[-1](x)


class GRUCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.hidden_size = hidden_size
        self.x_gates = Linear(input_size, 3 * hidden_size, rng)
        self.h_gates = Linear(hidden_size, 3 * hidden_size, rng)

    def __call__(self, x, h) -> Tensor:
        n = self.hidden_size
        gx = self.x_gates(x)
        gh = self.h_gates(h)
        r = ad.sigmoid(gx[:, :n] + gh[:, :n])
        z = ad.sigmoid(gx[:, n : 2 * n] + gh[:, n : 2 * n])
        cand = ad.tanh(gx[:, 2 * n :] + r * gh[:, 2 * n :])
        return (1.0 - z) * cand + z * h
