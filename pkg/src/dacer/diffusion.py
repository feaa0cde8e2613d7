"""Diffusion policy: a noise-prediction net driving a T-step DDPM reverse chain."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, NumericFaultError
from .numcore import tensor as T
from .numcore.nn import Mlp, forward_mlp, sinusoidal_embed
from .numcore.tensor import Tensor

EMBED_DIM = 16


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step constants; index ``t - 1`` holds the value for step t."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray


def make_schedule(T: int, beta_min: float = 0.1, beta_max: float = 10.0) -> DiffusionSchedule:
    """Variance-preserving discretisation of a linear continuous-time beta."""
    if T < 1:
        raise ConfigurationError(f"diffusion steps must be >= 1, got {T}")
    t = np.arange(1, T + 1)
    beta = 1.0 - np.exp(-beta_min / T - (beta_max - beta_min) * (2 * t - 1) / (2.0 * T * T))
    alpha = 1.0 - beta
    return DiffusionSchedule(T, beta, alpha, np.cumprod(alpha))


@dataclass
class PolicyOutput:
    action: np.ndarray
    pre_clip_action: np.ndarray
    action_tensor: Tensor | None = None


class QCritic(Protocol):
    def min_q(self, states, actions, *, frozen: bool = False) -> Tensor: ...


class DiffusionPolicy:
    """pi(a|s) realised as the reverse chain of a conditional DDPM.

    ``final_step_noise`` adds sqrt(beta_1) noise on the last denoising step too,
    which is what the sampling recursion literally prints; off by default.

    ``clip_denoised`` computes the same posterior mean through the implied
    clean-action estimate a0_hat = (a_t - sqrt(1 - abar_t) eps) / sqrt(abar_t),
    clipped to [-1, 1]; the two forms coincide whenever the clip is inactive.
    """

    def __init__(self, state_dim: int, act_dim: int, hidden: Sequence[int] = (64, 64, 64),
                 T: int = 20, rng: np.random.Generator | None = None,
                 final_step_noise: bool = False, clip_denoised: bool = False,
                 net: Mlp | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.act_dim = act_dim
        self.schedule = make_schedule(T)
        self.final_step_noise = final_step_noise
        self.clip_denoised = clip_denoised
        sizes = [state_dim + act_dim + EMBED_DIM, *hidden, act_dim]
        self.net = net if net is not None else Mlp.init(sizes, "mish", rng, name="policy")
        self._embed = np.stack([sinusoidal_embed(t, EMBED_DIM).data for t in range(T + 1)])
        self.net_evals = 0

    @property
    def T(self) -> int:
        return self.schedule.T

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def named_arrays(self) -> dict[str, np.ndarray]:
        return self.net.named_arrays()

    def eps(self, a_t, s, t: int) -> Tensor:
        """Noise prediction eps_theta(a_t, s, t) for a batch."""
        a_t = T.as_tensor(a_t)
        s = np.atleast_2d(s.data if isinstance(s, Tensor) else s)
        emb = np.broadcast_to(self._embed[t], (s.shape[0], EMBED_DIM))
        a2 = a_t if a_t.ndim == 2 else T.reshape(a_t, (1, -1))
        self.net_evals += 1
        return forward_mlp(self.net, T.concat([s, a2, emb]))

    def _coefs(self, t: int) -> tuple[float, float]:
        if not 1 <= t <= self.T:
            raise ContractError(f"step {t} outside 1..{self.T}")
        sch = self.schedule
        c_a = 1.0 / np.sqrt(sch.alpha[t - 1])
        c_e = -c_a * sch.beta[t - 1] / np.sqrt(1.0 - sch.alpha_bar[t - 1])
        return c_a, c_e

    def _mean(self, a_t: Tensor, eps: Tensor, t: int, noise: np.ndarray | None = None) -> Tensor:
        if not self.clip_denoised:
            c_a, c_e = self._coefs(t)
            return T.axpby(c_a, a_t, c_e, eps, noise)
        sch = self.schedule
        ab = sch.alpha_bar[t - 1]
        ab_prev = sch.alpha_bar[t - 2] if t > 1 else 1.0
        x0 = T.clip(T.axpby(1.0 / np.sqrt(ab), a_t, -np.sqrt(1.0 / ab - 1.0), eps), -1.0, 1.0)
        c0 = np.sqrt(ab_prev) * sch.beta[t - 1] / (1.0 - ab)
        ct = np.sqrt(sch.alpha[t - 1]) * (1.0 - ab_prev) / (1.0 - ab)
        return T.axpby(c0, x0, ct, a_t, noise)

    def posterior_mean(self, a_t, s, t: int) -> Tensor:
        """(a_t - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)."""
        self._coefs(t)
        a_t = T.as_tensor(a_t)
        if a_t.ndim == 1:
            a_t = T.reshape(a_t, (1, -1))
        return self._mean(a_t, self.eps(a_t, s, t), t)

    def sample(self, states, rng: np.random.Generator, record_grad: bool = False) -> PolicyOutput:
        """Run the reverse chain from a_T ~ N(0, I) down to a_0 and clip to [-1, 1]."""
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        n = s.shape[0]
        sch = self.schedule
        ctx = contextlib.nullcontext() if record_grad else T.no_grad()
        with ctx:
            a = Tensor(rng.standard_normal((n, self.act_dim)))
            for t in range(self.T, 0, -1):
                noise = None
                if t > 1 or self.final_step_noise:
                    noise = np.sqrt(sch.beta[t - 1]) * rng.standard_normal((n, self.act_dim))
                a = self._mean(a, self.eps(a, s, t), t, noise)
                if not np.all(np.isfinite(a.data)):
                    raise NumericFaultError(f"non-finite action in reverse chain at step t={t}")
            clipped = T.clip(a, -1.0, 1.0)
        return PolicyOutput(clipped.data, a.data, clipped if record_grad else None)

    def act(self, states, rng: np.random.Generator) -> np.ndarray:
        """Gradient-free clipped actions, one per row of ``states``."""
        return self.sample(states, rng).action


def policy_loss(policy: DiffusionPolicy, states, critic: QCritic, rng: np.random.Generator) -> Tensor:
    """-mean_s min(Q1, Q2)(s, a_0) with a_0 sampled on the tape."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[0] == 0:
        raise ContractError("policy loss over an empty batch")
    out = policy.sample(states, rng, record_grad=True)
    return T.neg(T.mean(critic.min_q(states, out.action_tensor, frozen=True)))
