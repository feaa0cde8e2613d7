"""Entropy regulation for the diffusion policy.

The policy's action density has no closed form, so its entropy is estimated by
fitting a Gaussian mixture to sampled actions and plugging the fit into the
mixing-entropy + weighted Gaussian-entropy surrogate.  The estimate drives a
scalar alpha that scales exploration noise added to executed actions.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, ContractError, NumericFaultError

log = logging.getLogger(__name__)

JITTER = 1e-6
COLLAPSE_WEIGHT = 1e-8
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)
    log_likelihood: list[float] = field(default_factory=list)
    n_iter: int = 0
    reseeded: int = 0

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.means.shape[1]


def _chol(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericFaultError("covariance is not positive definite after jitter") from None


def component_log_pdf(x: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """log N(x_i | mu_k, Sigma_k) as an (N, K) array."""
    n, d = x.shape
    out = np.empty((n, len(means)))
    for k, (mu, cov) in enumerate(zip(means, covs)):
        L = _chol(cov)
        z = np.linalg.solve(L, (x - mu).T)
        out[:, k] = -0.5 * (d * _LOG_2PI + np.sum(z * z, axis=0)) - np.sum(np.log(np.diag(L)))
    return out


def responsibilities(x: np.ndarray, model: GmmModel) -> tuple[np.ndarray, float]:
    """Posterior component memberships (rows sum to 1) and mean log-likelihood."""
    with np.errstate(divide="ignore"):
        lw = np.log(model.weights)
    joint = component_log_pdf(x, model.means, model.covs) + lw
    norm = logsumexp(joint, axis=1, keepdims=True)
    return np.exp(joint - norm), float(norm.mean())


def _kmeanspp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, K):
        d2 = np.min(((x[:, None, :] - np.asarray(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        idx = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
        centers.append(x[idx])
    return np.array(centers)


def _m_step(x: np.ndarray, gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, d = x.shape
    nk = gamma.sum(axis=0)
    weights = nk / n
    means = (gamma.T @ x) / nk[:, None]
    covs = np.empty((len(nk), d, d))
    for k in range(len(nk)):
        diff = x - means[k]
        c = (gamma[:, k, None] * diff).T @ diff / nk[k]
        covs[k] = 0.5 * (c + c.T) + JITTER * np.eye(d)
    return weights, means, covs


def em_fit(actions: np.ndarray, K: int = 3, max_iters: int = 100, tol: float = 1e-6,
           rng: np.random.Generator | None = None) -> GmmModel:
    """Full-covariance EM, seeded k-means++ style with equal weights and the pooled covariance.

    Stops once the mean log-likelihood improves by less than ``tol``.  The
    per-iteration log-likelihood trace is kept on the returned model.
    """
    x = np.asarray(actions, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if K < 1:
        raise ConfigurationError(f"need at least one component, got K={K}")
    if n < K:
        raise ContractError(f"{n} samples cannot support {K} components")
    rng = rng if rng is not None else np.random.default_rng(0)

    pooled = np.atleast_2d(np.cov(x, rowvar=False, bias=True)) + JITTER * np.eye(d)
    model = GmmModel(np.full(K, 1.0 / K), _kmeanspp(x, K, rng), np.repeat(pooled[None], K, axis=0))
    gamma, ll = responsibilities(x, model)
    model.log_likelihood.append(ll)
    for it in range(max_iters):
        model.weights, model.means, model.covs = _m_step(x, gamma)
        for k in np.flatnonzero(model.weights < COLLAPSE_WEIGHT):
            log.info("EM component %d collapsed (w=%.3g); reseeding from a sample", k, model.weights[k])
            model.means[k] = x[rng.integers(n)]
            model.covs[k] = pooled
            model.weights[k] = 1.0 / n
            model.weights /= model.weights.sum()
            model.reseeded += 1
        gamma, new_ll = responsibilities(x, model)
        model.log_likelihood.append(new_ll)
        model.n_iter = it + 1
        if new_ll - ll < tol:
            break
        ll = new_ll
    return model


def gmm_entropy(model: GmmModel) -> float:
    """-sum w log w + sum w * 0.5 * log((2 pi e)^d |Sigma|), in nats."""
    w = np.asarray(model.weights)
    d = model.d
    mix = -float(np.sum(w[w > 0] * np.log(w[w > 0])))
    gauss = 0.0
    for wk, cov in zip(w, model.covs):
        logdet = 2.0 * np.sum(np.log(np.diag(_chol(cov))))
        gauss += wk * 0.5 * (d * (_LOG_2PI + 1.0) + logdet)
    return mix + float(gauss)


class ActionSampler(Protocol):
    def act(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...


def estimate_policy_entropy(policy: ActionSampler, states: np.ndarray, n_samples: int = 200,
                            K: int = 3, rng: np.random.Generator | None = None) -> float:
    """Mean over states of the GMM entropy of ``n_samples`` policy actions per state."""
    rng = rng if rng is not None else np.random.default_rng(0)
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if len(states) == 0:
        raise ContractError("entropy estimate over an empty state batch")
    if n_samples < K:
        raise ContractError(f"{n_samples} samples per state cannot support {K} components")
    actions = policy.act(np.repeat(states, n_samples, axis=0), rng)
    actions = actions.reshape(len(states), n_samples, -1)
    return float(np.mean([gmm_entropy(em_fit(a, K, rng=rng)) for a in actions]))


class NoiseMode(str, enum.Enum):
    ADAPTIVE = "adaptive"
    FIXED = "fixed"
    LINEAR = "linear"
    NONE = "none"  # no exploration noise at all: the "DAC" ablation


@dataclass
class AlphaState:
    alpha: float = 0.27
    lr: float = 3e-2
    target_entropy: float = -0.9
    noise_scale: float = 0.1
    mode: NoiseMode = NoiseMode.ADAPTIVE
    decay_start: float = 0.27
    decay_end: float = 0.1

    def __post_init__(self):
        self.mode = NoiseMode(self.mode)
        if self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        if self.mode is NoiseMode.NONE:
            self.alpha = 0.0


def update_alpha(state: AlphaState, entropy: float) -> AlphaState:
    """alpha <- max(0, alpha - lr * (H_hat - H_target)); only the adaptive mode moves."""
    if state.mode is not NoiseMode.ADAPTIVE:
        return state
    if not np.isfinite(entropy):
        raise NumericFaultError(f"entropy estimate {entropy} is not finite; alpha left at {state.alpha}")
    state.alpha = max(0.0, state.alpha - state.lr * (entropy - state.target_entropy))
    return state


def decay_alpha(state: AlphaState, progress: float) -> AlphaState:
    """Linear-decay mode: interpolate decay_start -> decay_end as progress goes 0 -> 1."""
    if state.mode is NoiseMode.LINEAR:
        p = min(max(progress, 0.0), 1.0)
        state.alpha = state.decay_start + (state.decay_end - state.decay_start) * p
    return state


def apply_exploration_noise(a: np.ndarray, state: AlphaState, rng: np.random.Generator,
                            eval_mode: bool = False) -> np.ndarray:
    """clip(a + noise_scale * alpha * N(0, I), -1, 1) in training; ``a`` untouched in evaluation."""
    if eval_mode or state.alpha == 0.0:
        return a
    sigma = state.noise_scale * state.alpha
    return np.clip(a + sigma * rng.standard_normal(np.shape(a)), -1.0, 1.0)
