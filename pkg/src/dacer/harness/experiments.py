"""Packaged experiments: the bimodal-bandit mode comparison and the multi-goal headline run."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..envs import GOALS, MultiGoalEnv
from ..gaussian import GaussianPolicy
from ..numcore import Adam, backward
from ..numcore import tensor as T
from ..trainer import TrainConfig, Trainer
from .evaluation import aggregate, final_metric
from .exporters import export_q_landscape, sample_trajectories

log = logging.getLogger(__name__)

MODES = (0.6, -0.6)
MODE_WINDOW = 0.15


def mode_fractions(actions: np.ndarray) -> dict[str, float]:
    """Share of 1-D actions within MODE_WINDOW of +0.6, -0.6 and the midpoint 0."""
    a = np.ravel(actions)
    return {"pos": float(np.mean(np.abs(a - MODES[0]) <= MODE_WINDOW)),
            "neg": float(np.mean(np.abs(a - MODES[1]) <= MODE_WINDOW)),
            "mid": float(np.mean(np.abs(a) <= MODE_WINDOW))}


def train_gaussian_control(critic, state_dim: int, act_dim: int, steps: int, rng: np.random.Generator,
                           lr: float = 1e-3, batch: int = 256,
                           hidden: Sequence[int] = (64, 64)) -> GaussianPolicy:
    """Fit a diagonal-Gaussian actor to maximise the given (frozen) critic by reparameterisation."""
    pol = GaussianPolicy(state_dim, act_dim, hidden, rng)
    opt = Adam(pol.parameters(), lr)
    states = np.zeros((batch, state_dim))
    for _ in range(steps):
        opt.zero_grad()
        a = pol.sample(states, rng, record_grad=True).action_tensor
        backward(T.neg(T.mean(critic.min_q(states, a, frozen=True))))
        opt.step()
    return pol


@dataclass
class BanditResult:
    diffusion: dict[str, float]
    gaussian: dict[str, float]
    steps: int
    seconds: float
    alpha: float

    @property
    def diffusion_multimodal(self) -> bool:
        return self.diffusion["pos"] >= 0.2 and self.diffusion["neg"] >= 0.2

    @property
    def gaussian_collapsed(self) -> bool:
        return max(self.gaussian.values()) >= 0.8


def bandit_experiment(seed: int = 0, total_steps: int = 20_000, warmup: int = 5_000,
                      control_steps: int = 2_000, probe: int = 2_000, run_dir=None,
                      **overrides) -> BanditResult:
    """Train DACER on the bimodal bandit, then a Gaussian actor on the learned critic; compare histograms."""
    t0 = time.time()
    cfg = TrainConfig(env="bandit", seed=seed, total_steps=total_steps, warmup=warmup,
                      eval_interval=0, checkpoint_interval=0, **overrides)
    trainer = Trainer(cfg, run_dir=run_dir)
    trainer.run()
    rng = np.random.default_rng([seed, 7])
    diff_actions = trainer.agent.policy.act(np.zeros((probe, 1)), rng)
    control = train_gaussian_control(trainer.agent.critic, 1, 1, control_steps, rng)
    gauss_actions = control.act(np.zeros((probe, 1)), rng)
    res = BanditResult(mode_fractions(diff_actions), mode_fractions(gauss_actions), total_steps,
                       time.time() - t0, trainer.agent.alpha.alpha)
    log.info("bandit: diffusion %s  gaussian %s  (%.0fs)", res.diffusion, res.gaussian, res.seconds)
    return res


@dataclass
class MultiGoalResult:
    peaks: list
    goals_from_origin: list[int]
    final_returns: dict[str, dict[int, float]] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)
    run_dirs: dict[str, list[Path]] = field(default_factory=dict)

    def peaks_near_goals(self, tol: float = 1.0) -> bool:
        if len(self.peaks) != len(GOALS):
            return False
        near = [int(np.argmin([np.hypot(x - gx, y - gy) for gx, gy in GOALS])) for x, y, _ in self.peaks]
        dists = [np.hypot(x - GOALS[g][0], y - GOALS[g][1]) for (x, y, _), g in zip(self.peaks, near)]
        return sorted(near) == list(range(len(GOALS))) and max(dists) <= tol

    @property
    def distinct_goals(self) -> int:
        return int(np.count_nonzero(self.goals_from_origin))

    def summary(self, mode: str) -> tuple[float, float]:
        return aggregate(list(self.final_returns[mode].values()))


def multigoal_experiment(out_root, seeds: Sequence[int] = (0,), total_steps: int = 100_000,
                         modes: Sequence[str] = ("adaptive", "none"), resolution: int = 101,
                         rollouts: int = 100, **overrides) -> MultiGoalResult:
    """Train every mode on every seed; export the landscape and origin fan for the first mode/seed."""
    out_root = Path(out_root)
    result = MultiGoalResult([], [])
    env = MultiGoalEnv()
    for mode in modes:
        result.final_returns[mode] = {}
        result.run_dirs[mode] = []
        for seed in seeds:
            t0 = time.time()
            run_dir = out_root / mode / f"seed{seed}"
            cfg = TrainConfig(env="multigoal", seed=seed, total_steps=total_steps, noise_mode=mode,
                              **overrides)
            trainer = Trainer(cfg, env=env, run_dir=run_dir)
            metrics = trainer.run()
            result.final_returns[mode][seed] = final_metric(metrics.series("eval_return"), total_steps)
            result.seconds[f"{mode}/seed{seed}"] = time.time() - t0
            result.run_dirs[mode].append(run_dir)
            log.info("multigoal %s seed %d: final-window return %.3f (%.0fs)", mode, seed,
                     result.final_returns[mode][seed], time.time() - t0)
            if mode == modes[0] and seed == seeds[0]:
                agent = trainer.agent
                export = run_dir / "export"
                grid = export_q_landscape(agent.policy, agent.critic, export, resolution, seed=seed)
                fans = sample_trajectories(agent.policy, env, [(0.0, 0.0)], rollouts, seed, export)
                result.peaks = grid.peaks
                result.goals_from_origin = fans[0].goal_histogram()[:len(GOALS)].tolist()
    return result
