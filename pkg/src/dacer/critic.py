"""Twin Q-networks with twin targets, clipped double-Q Bellman targets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, NumericFaultError
from .numcore import tensor as T
from .numcore.nn import Mlp, forward_mlp
from .numcore.tensor import Tensor


class QFunction(Protocol):
    def __call__(self, states, actions, *, frozen: bool = False) -> Tensor: ...

    def parameters(self) -> list[Tensor]: ...

    def copy(self) -> "QFunction": ...


class QNet:
    """Q(s, a) as a GeLU MLP over concat(s, a) with a scalar head."""

    def __init__(self, mlp: Mlp):
        self.mlp = mlp

    @classmethod
    def init(cls, state_dim: int, act_dim: int, hidden: Sequence[int], rng: np.random.Generator,
             name: str = "q") -> "QNet":
        return cls(Mlp.init([state_dim + act_dim, *hidden, 1], "gelu", rng, name=name))

    def __call__(self, states, actions, *, frozen: bool = False) -> Tensor:
        mlp = self.mlp
        if frozen:
            mlp = Mlp([w.detach() for w in mlp.weights], [b.detach() for b in mlp.biases],
                      mlp.activation)
        x = T.concat([np.atleast_2d(states), actions if isinstance(actions, Tensor)
                      else np.atleast_2d(actions)])
        return T.reshape(forward_mlp(mlp, x), (-1,))

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    def copy(self, name: str | None = None) -> "QNet":
        return QNet(self.mlp.copy(name))


@dataclass
class BellmanBatch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    gamma: float = 0.99

    def __post_init__(self):
        n = len(self.r)
        if not (len(self.s) == len(self.a) == len(self.s2) == len(self.done) == n):
            raise ContractError("batch arrays differ in length")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"discount must lie in [0, 1), got {self.gamma}")

    def __len__(self) -> int:
        return len(self.r)


class CriticPair:
    """Online critics q1, q2 plus target copies that only move through soft_update."""

    def __init__(self, q1: QFunction, q2: QFunction, q1_target: QFunction | None = None,
                 q2_target: QFunction | None = None):
        self.q1, self.q2 = q1, q2
        self.q1_target = q1_target if q1_target is not None else _copy(q1, "q1_target")
        self.q2_target = q2_target if q2_target is not None else _copy(q2, "q2_target")

    @classmethod
    def init(cls, state_dim: int, act_dim: int, hidden: Sequence[int],
             rng: np.random.Generator) -> "CriticPair":
        return cls(QNet.init(state_dim, act_dim, hidden, rng, "q1"),
                   QNet.init(state_dim, act_dim, hidden, rng, "q2"))

    def parameters(self) -> list[Tensor]:
        return self.q1.parameters() + self.q2.parameters()

    def target_parameters(self) -> list[Tensor]:
        return self.q1_target.parameters() + self.q2_target.parameters()

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters() + self.target_parameters()}

    def min_q(self, states, actions, *, frozen: bool = False) -> Tensor:
        return T.minimum(self.q1(states, actions, frozen=frozen),
                         self.q2(states, actions, frozen=frozen))

    def min_target_q(self, states, actions) -> np.ndarray:
        with T.no_grad():
            return np.minimum(self.q1_target(states, actions).data,
                              self.q2_target(states, actions).data)


def _copy(q, name):
    try:
        return q.copy(name)
    except TypeError:
        return q.copy()


def bellman_target(critic: CriticPair, batch: BellmanBatch, next_actions: np.ndarray) -> np.ndarray:
    """y = r + gamma * (1 - done) * min_i Q_target_i(s', a'); a plain array, never on a tape.

    ``next_actions`` are the policy's actions at s' as used for data collection.
    """
    q_next = critic.min_target_q(batch.s2, next_actions)
    y = batch.r + batch.gamma * (1.0 - batch.done) * q_next
    if not np.all(np.isfinite(y)):
        raise NumericFaultError("non-finite Bellman target")
    return y


def critic_loss(critic: CriticPair, batch: BellmanBatch, y: np.ndarray) -> Tensor:
    """mean over the batch of sum_i (y - Q_i(s, a))**2."""
    if len(batch) == 0:
        raise ContractError("critic loss over an empty batch")
    y = np.asarray(y, dtype=np.float64)
    e1 = T.sub(critic.q1(batch.s, batch.a), y)
    e2 = T.sub(critic.q2(batch.s, batch.a), y)
    return T.mean(T.add(T.square(e1), T.square(e2)))


def soft_update(critic: CriticPair, retention: float) -> None:
    """target <- retention * target + (1 - retention) * online, in place."""
    if not 0.0 <= retention <= 1.0:
        raise ConfigurationError(f"retention must lie in [0, 1], got {retention}")
    online = critic.parameters()
    for tgt, src in zip(critic.target_parameters(), online):
        tgt.data *= retention
        tgt.data += (1.0 - retention) * src.data
