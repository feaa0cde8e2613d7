"""Evaluation protocol: noise-free rollouts and the final-10% score."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ContractError


def rollout_batch(policy, env, n: int, rng: np.random.Generator, start=None, record: bool = False):
    """Run ``n`` eval-mode episodes side by side; one policy call per time step for all live envs.

    Returns (returns, paths, reached_goals); ``paths`` is empty unless ``record``.
    """
    envs = [copy.deepcopy(env) for _ in range(n)]
    states = np.stack([e.reset(rng, start) for e in envs])
    returns = np.zeros(n)
    goals = np.full(n, -1)
    paths = [[s.copy()] for s in states] if record else []
    live = np.ones(n, dtype=bool)
    while live.any():
        idx = np.flatnonzero(live)
        actions = policy.act(states[idx], rng)
        for j, i in enumerate(idx):
            res = envs[i].step(actions[j])
            returns[i] += res.reward
            states[i] = res.state
            if record:
                paths[i].append(res.state.copy())
            if res.done:
                live[i] = False
                goals[i] = res.info.get("goal", -1)
    return returns, paths, goals


def evaluate(policy, env, episodes: int = 10, rng: np.random.Generator | None = None) -> float:
    """Mean undiscounted, unscaled return over ``episodes`` noise-free episodes."""
    if episodes < 1:
        raise ContractError("need at least one evaluation episode")
    rng = rng if rng is not None else np.random.default_rng(0)
    returns, _, _ = rollout_batch(policy, env, episodes, rng)
    return float(returns.mean())


def final_metric(eval_returns: Sequence[tuple[int, float]], total_iters: int) -> float:
    """Highest evaluation return among evaluations strictly after 90% of training."""
    window = [v for it, v in eval_returns if it > 0.9 * total_iters]
    if not window:
        raise ContractError("no evaluations fall inside the final 10% of training")
    return float(max(window))


def aggregate(per_seed: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation across seeds."""
    arr = np.asarray(per_seed, dtype=np.float64)
    if arr.size == 0:
        raise ContractError("nothing to aggregate")
    return float(arr.mean()), float(arr.std())


@dataclass
class EvalReport:
    returns: dict[int, list[tuple[int, float]]]
    total_iters: int

    @property
    def per_seed(self) -> dict[int, float]:
        return {seed: final_metric(r, self.total_iters) for seed, r in self.returns.items()}

    @property
    def summary(self) -> tuple[float, float]:
        return aggregate(list(self.per_seed.values()))
