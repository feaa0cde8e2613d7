from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, DimensionError
from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {"gelu": T.gelu, "mish": T.mish}


@dataclass
class Mlp:
    """Fully connected net; the activation sits between layers, never after the last."""

    weights: list[Tensor]
    biases: list[Tensor]
    activation: str = "gelu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise DimensionError(f"layer {i} output does not feed layer {i + 1}")

    @classmethod
    def init(cls, sizes: Sequence[int], activation: str, rng: np.random.Generator,
             name: str = "mlp") -> "Mlp":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            weights.append(Tensor(rng.uniform(-bound, bound, (n_in, n_out)), True, f"{name}.w{i}"))
            biases.append(Tensor(rng.uniform(-bound, bound, n_out), True, f"{name}.b{i}"))
        return cls(weights, biases, activation)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def copy(self, name: str | None = None) -> "Mlp":
        ws = [Tensor(w.data.copy(), True, _rename(w.name, name)) for w in self.weights]
        bs = [Tensor(b.data.copy(), True, _rename(b.name, name)) for b in self.biases]
        return Mlp(ws, bs, self.activation)

    def __call__(self, x) -> Tensor:
        return forward_mlp(self, x)


def _rename(old: str | None, prefix: str | None) -> str | None:
    if prefix is None or old is None:
        return old
    return prefix + old[old.index("."):]


def forward_mlp(params: Mlp, x) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != params.in_dim:
        raise DimensionError(f"input width {x.shape[-1]} != network input {params.in_dim}")
    act = ACTIVATIONS[params.activation]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = T.linear(x, w, b)
        if i < last:
            x = act(x)
    return x


def gelu(x) -> Tensor:
    return T.gelu(T.as_tensor(x))


def mish(x) -> Tensor:
    return T.mish(T.as_tensor(x))


def sinusoidal_embed(t: int, dim: int) -> Tensor:
    """[sin(t*w_1..w_h), cos(t*w_1..w_h)] with w_k = 10000**(-2k/dim), h = dim/2."""
    if dim <= 0 or dim % 2:
        raise ConfigurationError(f"embedding width must be a positive even number, got {dim}")
    if t < 0:
        raise ConfigurationError(f"timestep must be non-negative, got {t}")
    k = np.arange(1, dim // 2 + 1)
    freqs = 10000.0 ** (-2.0 * k / dim)
    return Tensor(np.concatenate([np.sin(t * freqs), np.cos(t * freqs)]))
