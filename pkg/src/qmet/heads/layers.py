"""Parameter containers shared by all heads: fully connected MLPs and deep linear nets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

__all__ = ["EncoderConfig", "MLP", "DeepLinearNet", "deep_linear_collapse", "hidden_width", "fan_in_uniform"]


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def hidden_width(rows: int) -> int:
    """``max(64, 2^(1 + ceil(log2 rows)))``: the hidden size recipe for deep linear nets."""
    return max(64, 2 ** (1 + math.ceil(math.log2(max(rows, 1)))))


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden: tuple[int, ...] = (128, 128)
    latent_dim: int = 32

    def __post_init__(self):
        if self.input_dim < 1 or self.latent_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid encoder sizes: {self}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.latent_dim)


class MLP:
    """Fully connected network with rectifier activations between layers."""

    def __init__(self, sizes, rng: np.random.Generator, name: str):
        self.sizes = tuple(int(s) for s in sizes)
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.layers = []
        for li, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            w = ad.parameter(fan_in_uniform(rng, (a, b), a), f"{name}.{li}.W")
            bias = ad.parameter(fan_in_uniform(rng, (b,), a), f"{name}.{li}.b")
            self.params[w.name] = w
            self.params[bias.name] = bias
            self.layers.append((w, bias))

    def __call__(self, x) -> Tensor:
        h = ad.as_tensor(x)
        for li, (w, b) in enumerate(self.layers):
            h = h @ w + b
            if li < len(self.layers) - 1:
                h = ad.relu(h)
        return h


@dataclass
class DeepLinearNet:
    """Factorized matrix ``M_l ... M_1 + B`` of shape ``rows x cols``."""

    factors: list = field(default_factory=list)
    bias: Tensor | None = None

    @classmethod
    def create(cls, rows: int, cols: int, rng: np.random.Generator, name: str, hidden=None, bias: bool = True):
        if hidden is None:
            w = hidden_width(max(rows, cols))
            hidden = (w, w, w)
        if min(hidden) < min(rows, cols):
            raise ValueError("deep linear net hidden width must be >= min(rows, cols)")
        dims = [cols, *hidden, rows]
        factors = [
            ad.parameter(fan_in_uniform(rng, (dims[i + 1], dims[i]), dims[i]), f"{name}.M{i}")
            for i in range(len(dims) - 1)
        ]
        b = ad.parameter(np.zeros((rows, cols)), f"{name}.B") if bias else None
        return cls(factors, b)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.factors[-1].shape[0], self.factors[0].shape[1])

    @property
    def params(self) -> dict[str, Tensor]:
        out = {f.name: f for f in self.factors}
        if self.bias is not None:
            out[self.bias.name] = self.bias
        return out

    def collapse(self) -> Tensor:
        m = self.factors[0]
        for f in self.factors[1:]:
            m = f @ m
        return m + self.bias if self.bias is not None else m


def deep_linear_collapse(net: DeepLinearNet) -> np.ndarray:
    return net.collapse().data
