"""Diagonal-Gaussian policy used as the unimodal control in the bandit comparison."""
from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np

from .diffusion import PolicyOutput
from .numcore import tensor as T
from .numcore.nn import Mlp, forward_mlp
from .numcore.tensor import Tensor


class GaussianPolicy:
    def __init__(self, state_dim: int, act_dim: int, hidden: Sequence[int] = (64, 64),
                 rng: np.random.Generator | None = None, log_std_bounds=(-20.0, 0.5),
                 init_log_std: float = -0.5):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.act_dim = act_dim
        self.net = Mlp.init([state_dim, *hidden, act_dim], "gelu", rng, name="gauss")
        self.log_std = Tensor(np.full(act_dim, init_log_std), True, "gauss.log_std")
        self.log_std_bounds = log_std_bounds

    def parameters(self) -> list[Tensor]:
        return self.net.parameters() + [self.log_std]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def sample(self, states, rng: np.random.Generator, record_grad: bool = False) -> PolicyOutput:
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        ctx = contextlib.nullcontext() if record_grad else T.no_grad()
        with ctx:
            mu = forward_mlp(self.net, s)
            std = T.exp(T.clip(self.log_std, *self.log_std_bounds))
            noise = rng.standard_normal((len(s), self.act_dim))
            a = T.add(mu, T.mul(std, noise))
            clipped = T.clip(a, -1.0, 1.0)
        return PolicyOutput(clipped.data, a.data, clipped if record_grad else None)

    def act(self, states, rng: np.random.Generator) -> np.ndarray:
        return self.sample(states, rng).action
