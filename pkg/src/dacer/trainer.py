"""Online training loop: collect with the noisy diffusion policy, update critics, policy and alpha."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .critic import BellmanBatch, CriticPair, bellman_target, critic_loss, soft_update
from .diffusion import DiffusionPolicy, policy_loss
from .entropy import (AlphaState, NoiseMode, apply_exploration_noise, decay_alpha,
                      estimate_policy_entropy, update_alpha)
from .envs import make_env
from .errors import ConfigurationError, ContractError, DacerError, NumericFaultError
from .numcore import Adam, backward, load_checkpoint, restore_into, save_checkpoint
from .numcore.tensor import Tensor

log = logging.getLogger(__name__)


# -- replay buffer ---------------------------------------------------------
class ReplayBuffer:
    """Fixed-capacity ring of (s, a, r, s', done) rows backed by preallocated arrays."""

    def __init__(self, capacity: int, state_dim: int, act_dim: int):
        if capacity < 1:
            raise ConfigurationError("buffer capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s, a, r: float, s2, done: bool) -> None:
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s2, float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ContractError(f"cannot draw {n} samples from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator, gamma: float = 0.99) -> BellmanBatch:
        idx = self.sample_indices(n, rng)
        return BellmanBatch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx], gamma)


# -- configuration ---------------------------------------------------------
@dataclass
class TrainConfig:
    env: str = "multigoal"
    seed: int = 0
    total_steps: int = 150_000
    warmup: int = 30_000
    buffer_capacity: int = 1_000_000
    batch_size: int = 256
    gamma: float = 0.99
    tau: float = 0.005  # blend-in rate; targets keep 1 - tau of themselves per update
    policy_delay: int = 2
    alpha_delay: int = 10_000
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    lr_alpha: float = 3e-2
    alpha_init: float = 0.27
    target_entropy_per_dim: float = -0.9
    noise_scale: float = 0.1
    noise_mode: str = "adaptive"
    fixed_alpha: float = 0.1
    decay_start: float = 0.27
    decay_end: float = 0.1
    diffusion_steps: int = 20
    gmm_components: int = 3
    entropy_samples: int = 200
    entropy_states: int = 32
    reward_scale: float = 0.2
    policy_hidden: tuple = (64, 64, 64)
    critic_hidden: tuple = (64, 64, 64)
    final_step_noise: bool = False
    clip_denoised: bool = True
    max_grad_norm: float | None = None
    eval_interval: int = 5_000
    eval_episodes: int = 10
    log_interval: int = 100
    checkpoint_interval: int = 10_000
    keep_checkpoints: int = 3

    def __post_init__(self):
        for name in ("total_steps", "buffer_capacity", "batch_size", "policy_delay", "alpha_delay",
                     "diffusion_steps", "gmm_components", "entropy_samples", "entropy_states",
                     "eval_episodes", "log_interval"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.warmup < self.batch_size:
            raise ConfigurationError("warm-up must cover at least one batch")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]")
        if self.noise_mode not in {m.value for m in NoiseMode}:
            raise ConfigurationError(f"unknown noise mode {self.noise_mode!r}")
        self.policy_hidden = tuple(int(h) for h in self.policy_hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {lineno}: expected key=value")
            k, v = (p.strip() for p in line.split("=", 1))
            raw[k] = v
        types = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in raw.items():
            if k not in types:
                raise ConfigurationError(f"unknown config key {k!r}")
            kwargs[k] = _parse_value(types[k].default, v)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


def _parse_value(default, text: str):
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        return tuple(int(x) for x in text.split(",") if x.strip())
    if isinstance(default, int):
        return int(float(text))
    if isinstance(default, float) or default is None:
        return None if text.lower() in ("none", "") else float(text)
    return text


# -- metrics ---------------------------------------------------------------
@dataclass
class RunMetrics:
    """Append-only (iteration, metric, value) rows, optionally mirrored to a CSV file."""

    rows: list[tuple[int, str, float]] = field(default_factory=list)
    path: Path | None = None
    _last: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.path is not None and not Path(self.path).exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(["iteration", "metric", "value"])

    def record(self, iteration: int, metric: str, value: float) -> None:
        if iteration <= self._last.get(metric, -1):
            raise ContractError(f"metric {metric!r}: iteration {iteration} is not after {self._last[metric]}")
        self._last[metric] = iteration
        self.rows.append((iteration, metric, float(value)))
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([iteration, metric, repr(float(value))])

    def series(self, metric: str) -> list[tuple[int, float]]:
        return [(i, v) for i, m, v in self.rows if m == metric]

    @classmethod
    def read_csv(cls, path) -> "RunMetrics":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.record(int(row["iteration"]), row["metric"], float(row["value"]))
        return out


class TrainingAborted(DacerError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"training aborted at step {step}: {reason}")
        self.step = step


# -- the agent -------------------------------------------------------------
class Agent:
    """Policy, twin critics and the alpha regulator, plus their checkpoint layout."""

    def __init__(self, cfg: TrainConfig, state_dim: int, act_dim: int, rng: np.random.Generator):
        self.cfg = cfg
        self.policy = DiffusionPolicy(state_dim, act_dim, cfg.policy_hidden, cfg.diffusion_steps,
                                      rng, final_step_noise=cfg.final_step_noise,
                                      clip_denoised=cfg.clip_denoised)
        self.critic = CriticPair.init(state_dim, act_dim, cfg.critic_hidden, rng)
        mode = NoiseMode(cfg.noise_mode)
        start = {NoiseMode.FIXED: cfg.fixed_alpha, NoiseMode.LINEAR: cfg.decay_start}.get(mode, cfg.alpha_init)
        self.alpha = AlphaState(alpha=start, lr=cfg.lr_alpha,
                                target_entropy=cfg.target_entropy_per_dim * act_dim,
                                noise_scale=cfg.noise_scale, mode=mode,
                                decay_start=cfg.decay_start, decay_end=cfg.decay_end)

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.policy.named_arrays())
        out.update(self.critic.named_arrays())
        return out

    def save(self, path, step: int) -> None:
        arrays = dict(self.named_arrays())
        arrays["alpha"] = np.array(self.alpha.alpha)
        arrays["step"] = np.array(float(step))
        save_checkpoint(path, arrays)

    def load(self, path) -> int:
        loaded = load_checkpoint(path)
        restore_into(self.named_arrays(), loaded)
        if "alpha" in loaded:
            self.alpha.alpha = float(loaded["alpha"])
        return int(loaded.get("step", np.array(0.0)))


def agent_from_checkpoint(path, cfg: TrainConfig | None = None) -> Agent:
    """Rebuild an agent for ``cfg`` (or the config echoed beside the checkpoint) and load weights."""
    path = Path(path)
    if cfg is None:
        for cand in (path.parent / "config.txt", path.parent.parent / "config.txt"):
            if cand.exists():
                cfg = TrainConfig.from_text(cand.read_text())
                break
        else:
            raise ConfigurationError(f"no config.txt found next to {path}")
    env = make_env(cfg.env)
    agent = Agent(cfg, env.state_dim, env.act_dim, np.random.default_rng(cfg.seed))
    agent.load(path)
    return agent


class Trainer:
    def __init__(self, cfg: TrainConfig, env=None, run_dir: str | Path | None = None):
        self.cfg = cfg
        self.env = env if env is not None else make_env(cfg.env)
        seeds = np.random.SeedSequence(cfg.seed).spawn(4)
        init_rng, self.act_rng, self.update_rng, self.misc_rng = (np.random.default_rng(s) for s in seeds)
        self.agent = Agent(cfg, self.env.state_dim, self.env.act_dim, init_rng)
        self.buffer = ReplayBuffer(min(cfg.buffer_capacity, max(cfg.total_steps, 1)),
                                   self.env.state_dim, self.env.act_dim)
        self.critic_opt = Adam(self.agent.critic.parameters(), cfg.lr_critic,
                               max_grad_norm=cfg.max_grad_norm)
        self.policy_opt = Adam(self.agent.policy.parameters(), cfg.lr_actor,
                               max_grad_norm=cfg.max_grad_norm)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            (self.run_dir / "config.txt").write_text(cfg.to_text())
        self.metrics = RunMetrics(path=self.run_dir / "metrics.csv" if self.run_dir else None)
        self.step = 0
        self.updates = 0
        self.critic_updates = 0
        self.policy_updates = 0
        self.alpha_updates = 0
        self.last_policy_loss: float | None = None
        self._saved: list[Path] = []

    # one gradient update step of Algorithm 1
    def update(self) -> dict[str, float]:
        cfg, agent = self.cfg, self.agent
        rng = self.update_rng
        batch = self.buffer.sample(cfg.batch_size, rng, cfg.gamma)
        out: dict[str, float] = {}

        if np.all(batch.done):
            a2 = batch.a  # every target is masked; skip the reverse chain
        else:
            a2 = agent.policy.act(batch.s2, rng)
            a2 = apply_exploration_noise(a2, agent.alpha, rng)
        y = bellman_target(agent.critic, batch, a2)
        self.critic_opt.zero_grad()
        loss_q = critic_loss(agent.critic, batch, y)
        _check_finite(loss_q, "critic loss")
        backward(loss_q)
        self.critic_opt.step()
        self.critic_updates += 1
        out["critic_loss"] = loss_q.item()

        self.updates += 1
        if self.updates % cfg.policy_delay == 0:
            self.policy_opt.zero_grad()
            loss_pi = policy_loss(agent.policy, batch.s, agent.critic, rng)
            _check_finite(loss_pi, "policy loss")
            backward(loss_pi)
            self.policy_opt.step()
            self.policy_updates += 1
            self.last_policy_loss = loss_pi.item()
        if self.last_policy_loss is not None:
            out["policy_loss"] = self.last_policy_loss  # most recent, also on critic-only steps

        if agent.alpha.mode is NoiseMode.LINEAR:
            decay_alpha(agent.alpha, self.step / cfg.total_steps)
        if self.step % cfg.alpha_delay == 0:
            # measured in every mode so that all modes log the same metrics; only adaptive reacts
            idx = self.buffer.sample_indices(min(cfg.entropy_states, len(self.buffer)), rng)
            h = estimate_policy_entropy(agent.policy, self.buffer.s[idx], cfg.entropy_samples,
                                        cfg.gmm_components, rng)
            if agent.alpha.mode is NoiseMode.ADAPTIVE:
                update_alpha(agent.alpha, h)
                self.alpha_updates += 1
            out["entropy"] = h

        soft_update(agent.critic, 1.0 - cfg.tau)
        return out

    def run(self, eval_fn=None) -> RunMetrics:
        """Run Algorithm 1 for ``total_steps`` environment steps.

        ``eval_fn(agent, step)`` returns the mean evaluation return; defaults to
        the standard noise-free protocol.
        """
        from .harness.evaluation import evaluate

        cfg, env, agent = self.cfg, self.env, self.agent
        if eval_fn is None:
            def eval_fn(agent, step):
                eval_rng = np.random.default_rng([cfg.seed, step])
                return evaluate(agent.policy, env, cfg.eval_episodes, eval_rng)

        s = env.reset(self.act_rng)
        t0 = time.time()
        while self.step < cfg.total_steps:
            self.step += 1
            step = self.step
            try:
                a = agent.policy.act(s[None], self.act_rng)[0]
                a = apply_exploration_noise(a, agent.alpha, self.act_rng)
                res = env.step(a)
            except DacerError as exc:
                raise TrainingAborted(step, f"environment/policy fault: {exc}") from exc
            if not np.isfinite(res.reward):
                raise TrainingAborted(step, "environment returned a non-finite reward")
            terminal = bool(res.info.get("terminal", res.done))
            self.buffer.push(s, a, res.reward * cfg.reward_scale, res.state, terminal)
            s = env.reset(self.act_rng) if res.done else res.state

            if len(self.buffer) >= cfg.warmup:
                try:
                    stats = self.update()
                except NumericFaultError as exc:
                    self._checkpoint(step, tag="abort")
                    raise TrainingAborted(step, str(exc)) from exc
                if step % cfg.log_interval == 0 or "entropy" in stats:
                    for k, v in stats.items():
                        self.metrics.record(step, k, v)
                    self.metrics.record(step, "alpha", agent.alpha.alpha)

            if cfg.eval_interval and step % cfg.eval_interval == 0:
                ret = eval_fn(agent, step)
                self.metrics.record(step, "eval_return", ret)
                log.info("step %d  eval %.3f  alpha %.4f  (%.0fs)", step, ret, agent.alpha.alpha,
                         time.time() - t0)
            if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                self._checkpoint(step)
        if self.run_dir is not None:
            agent.save(self.run_dir / "final.ckpt", self.step)
        return self.metrics

    def _checkpoint(self, step: int, tag: str = "ckpt") -> None:
        if self.run_dir is None:
            return
        d = self.run_dir / "checkpoints"
        d.mkdir(exist_ok=True)
        path = d / f"{tag}_{step:08d}.ckpt"
        self.agent.save(path, step)
        if tag == "ckpt":
            self._saved.append(path)
            while len(self._saved) > self.cfg.keep_checkpoints:
                self._saved.pop(0).unlink(missing_ok=True)


def _check_finite(loss: Tensor, what: str) -> None:
    if not np.isfinite(loss.item()):
        raise NumericFaultError(f"{what} is not finite")


def train(cfg: TrainConfig, env=None, run_dir=None) -> tuple[Trainer, RunMetrics]:
    trainer = Trainer(cfg, env, run_dir)
    return trainer, trainer.run()
