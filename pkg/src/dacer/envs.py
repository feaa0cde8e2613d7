"""Desk-scale environments: the 2-D multi-goal point mass and a 1-D bimodal bandit."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError

GOALS = ((0.0, 5.0), (0.0, -5.0), (5.0, 0.0), (-5.0, 0.0))


@dataclass
class EnvStep:
    state: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass
class MultiGoalSpec:
    goals: tuple = GOALS
    half_width: float = 7.0
    horizon: int = 30
    action_scale: float = 1.0
    action_cost: float = 0.05
    goal_radius: float = 0.5
    start_std: float = 0.5


class MultiGoalEnv:
    """Point mass on [-7, 7]^2: s' = clip(s + a), reward = -dist to nearest goal - cost * |a|^2."""

    state_dim = 2
    act_dim = 2
    name = "multigoal"

    def __init__(self, spec: MultiGoalSpec | None = None):
        self.spec = spec or MultiGoalSpec()
        self.goals = np.asarray(self.spec.goals, dtype=np.float64)
        self.state: np.ndarray | None = None
        self.t = 0
        self.done = True
        self.clipped_actions = 0

    def goal_distances(self, s: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(s)[..., None, :] - self.goals, axis=-1)

    def reward(self, s_next: np.ndarray, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a)
        return -self.goal_distances(s_next).min(axis=-1) - self.spec.action_cost * np.sum(a * a, axis=-1)

    def reset(self, rng: np.random.Generator, start=None) -> np.ndarray:
        w = self.spec.half_width
        if start is not None:
            start = np.asarray(start, dtype=np.float64)
            if start.shape != (2,) or np.any(np.abs(start) > w):
                raise ContractError(f"start {start} lies outside the plane [-{w}, {w}]^2")
            self.state = start.copy()
        else:
            self.state = np.clip(rng.normal(0.0, self.spec.start_std, 2), -w, w)
        self.t = 0
        self.done = False
        return self.state.copy()

    def step(self, action) -> EnvStep:
        if self.done or self.state is None:
            raise ContractError("step() on a finished episode; call reset() first")
        a = np.asarray(action, dtype=np.float64)
        if np.any(np.abs(a) > 1.0):
            self.clipped_actions += 1
            a = np.clip(a, -1.0, 1.0)
        w = self.spec.half_width
        s_next = np.clip(self.state + self.spec.action_scale * a, -w, w)
        dists = self.goal_distances(s_next)
        r = float(-dists.min() - self.spec.action_cost * float(a @ a))
        self.t += 1
        reached = bool(dists.min() < self.spec.goal_radius)
        self.done = reached or self.t >= self.spec.horizon
        self.state = s_next
        info = {"distance": float(dists.min()), "goal": int(dists.argmin()) if reached else -1,
                "terminal": reached, "truncated": self.done and not reached}
        return EnvStep(s_next.copy(), r, self.done, info)


def bimodal_reward(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return np.exp(-(a - 0.6) ** 2 / 0.02) + np.exp(-(a + 0.6) ** 2 / 0.02)


class BimodalBandit:
    """Single-step episodes with a constant observation and two equal reward peaks at a = +-0.6."""

    state_dim = 1
    act_dim = 1
    name = "bandit"

    def __init__(self):
        self.done = True
        self.clipped_actions = 0

    def reset(self, rng: np.random.Generator | None = None, start=None) -> np.ndarray:
        self.done = False
        return np.zeros(1)

    def step(self, action) -> EnvStep:
        if self.done:
            raise ContractError("step() on a finished episode; call reset() first")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if np.any(np.abs(a) > 1.0):
            self.clipped_actions += 1
            a = np.clip(a, -1.0, 1.0)
        self.done = True
        return EnvStep(np.zeros(1), float(bimodal_reward(a[0])), True,
                       {"terminal": True, "truncated": False, "goal": -1})


def bimodal_bandit_step(action) -> EnvStep:
    env = BimodalBandit()
    env.reset()
    return env.step(action)


ENVS = {"multigoal": MultiGoalEnv, "bandit": BimodalBandit}


def make_env(name: str, **overrides):
    if name not in ENVS:
        raise ConfigurationError(f"unknown environment {name!r}; choose from {sorted(ENVS)}")
    if name == "multigoal" and overrides:
        return MultiGoalEnv(MultiGoalSpec(**overrides))
    return ENVS[name]()
