import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacer.critic import BellmanBatch, CriticPair, QNet, bellman_target, critic_loss, soft_update
from dacer.errors import ConfigurationError, ContractError, NumericFaultError
from dacer.numcore import backward
from dacer.numcore import tensor as T
from dacer.numcore.tensor import Tensor

from .conftest import autodiff, central_diff, max_rel_err


class TableQ:
    """Q(s, a) = s^T W a for one-hot s and a: a tabular critic behind the network interface."""

    def __init__(self, table, name="table"):
        self.w = Tensor(np.array(table, dtype=np.float64), True, name=name)

    def __call__(self, states, actions, *, frozen=False):
        w = self.w.detach() if frozen else self.w
        return T.tsum(T.mul(T.matmul(np.atleast_2d(states), w), actions), axis=1)

    def parameters(self):
        return [self.w]

    def copy(self, name=None):
        return TableQ(self.w.data.copy(), name or self.w.name)


def _pair(t1, t2, t1_target=None, t2_target=None):
    mk = lambda t: TableQ(t) if t is not None else None
    return CriticPair(TableQ(t1), TableQ(t2), mk(t1_target), mk(t2_target))


def _batch(n, r=1.0, gamma=0.99, done=0.0):
    s = np.tile([[1.0, 0.0]], (n, 1))
    return BellmanBatch(s, s.copy(), np.full(n, r), s.copy(), np.full(n, done), gamma)


# -- bellman_target --------------------------------------------------------
def test_worked_target():
    critic = _pair(np.zeros((2, 2)), np.zeros((2, 2)), [[10.0, 0], [0, 0]], [[12.0, 0], [0, 0]])
    y = bellman_target(critic, _batch(1), np.array([[1.0, 0.0]]))
    assert y[0] == pytest.approx(10.9, abs=1e-12)


def test_myopic_target_is_reward():
    critic = _pair(np.zeros((2, 2)), np.zeros((2, 2)), np.full((2, 2), 5.0), np.full((2, 2), 7.0))
    y = bellman_target(critic, _batch(3, r=2.5, gamma=0.0), np.array([[1.0, 0.0]] * 3))
    np.testing.assert_array_equal(y, 2.5)


def test_terminal_masks_targets():
    critic = _pair(np.zeros((2, 2)), np.zeros((2, 2)), np.full((2, 2), 1e6), np.full((2, 2), 1e6))
    y = bellman_target(critic, _batch(2, r=-1.0, done=1.0), np.array([[1.0, 0.0]] * 2))
    np.testing.assert_array_equal(y, -1.0)


def test_target_carries_no_gradient():
    critic = _pair(np.zeros((2, 2)), np.zeros((2, 2)))
    y = bellman_target(critic, _batch(2), np.array([[0.0, 1.0]] * 2))
    assert isinstance(y, np.ndarray)
    assert all(p.grad is None for p in critic.target_parameters())


def test_non_finite_target_is_a_fault():
    critic = _pair(np.zeros((2, 2)), np.zeros((2, 2)), np.full((2, 2), np.nan), np.zeros((2, 2)))
    with pytest.raises(NumericFaultError):
        bellman_target(critic, _batch(1), np.array([[1.0, 0.0]]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_target_never_exceeds_either_single_target(seed):
    r = np.random.default_rng(seed)
    critic = CriticPair.init(3, 2, (8,), r)
    n = 16
    batch = BellmanBatch(r.normal(size=(n, 3)), r.uniform(-1, 1, (n, 2)), r.normal(size=n),
                         r.normal(size=(n, 3)), (r.uniform(size=n) < 0.3).astype(float), 0.9)
    a2 = r.uniform(-1, 1, (n, 2))
    y = bellman_target(critic, batch, a2)
    with T.no_grad():
        for q in (critic.q1_target, critic.q2_target):
            single = batch.r + batch.gamma * (1 - batch.done) * q(batch.s2, a2).data
            assert np.all(y <= single + 1e-12)


def test_batch_validation():
    with pytest.raises(ContractError):
        BellmanBatch(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(3), np.zeros((2, 1)), np.zeros(2))
    with pytest.raises(ConfigurationError):
        _batch(1, gamma=1.0)


# -- critic_loss -----------------------------------------------------------
def test_loss_zero_when_critics_hit_target():
    critic = _pair(np.full((2, 2), 3.0), np.full((2, 2), 3.0))
    assert critic_loss(critic, _batch(4), np.full(4, 3.0)).item() == 0.0


@pytest.mark.parametrize("c", [0.5, -2.0, 3.25])
def test_loss_constant_offset(c):
    critic = _pair(np.full((2, 2), 1.0 + c), np.full((2, 2), 1.0 + c))
    assert critic_loss(critic, _batch(5), np.ones(5)).item() == pytest.approx(2 * c * c, rel=1e-14)


def test_loss_rejects_empty_batch():
    critic = _pair(np.zeros((2, 2)), np.zeros((2, 2)))
    empty = BellmanBatch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ContractError):
        critic_loss(critic, empty, np.zeros(0))


def test_loss_gradient_matches_finite_differences(rng):
    critic = CriticPair.init(3, 2, (5, 4), rng)
    n = 7
    batch = BellmanBatch(rng.normal(size=(n, 3)), rng.uniform(-1, 1, (n, 2)), rng.normal(size=n),
                         rng.normal(size=(n, 3)), np.zeros(n))
    y = bellman_target(critic, batch, rng.uniform(-1, 1, (n, 2)))
    params = critic.parameters()
    with T.no_grad():
        fd = central_diff(lambda: critic_loss(critic, batch, y).item(), params)
    ad = autodiff(lambda: critic_loss(critic, batch, y), params)
    assert max(max_rel_err(a, f) for a, f in zip(ad, fd)) < 1e-4


def test_loss_gradient_skips_targets(rng):
    critic = CriticPair.init(2, 1, (4,), rng)
    batch = BellmanBatch(rng.normal(size=(3, 2)), rng.normal(size=(3, 1)), np.ones(3),
                         rng.normal(size=(3, 2)), np.zeros(3))
    backward(critic_loss(critic, batch, bellman_target(critic, batch, np.zeros((3, 1)))))
    assert all(p.grad is not None for p in critic.parameters())
    assert all(p.grad is None for p in critic.target_parameters())


# -- soft_update -----------------------------------------------------------
def test_retention_one_keeps_targets(rng):
    critic = CriticPair.init(2, 1, (4,), rng)
    for p in critic.parameters():
        p.data += 1.0
    before = [p.data.copy() for p in critic.target_parameters()]
    soft_update(critic, 1.0)
    for b, p in zip(before, critic.target_parameters()):
        np.testing.assert_array_equal(p.data, b)


def test_retention_zero_copies_online(rng):
    critic = CriticPair.init(2, 1, (4,), rng)
    for p in critic.parameters():
        p.data += 1.0
    soft_update(critic, 0.0)
    for t, o in zip(critic.target_parameters(), critic.parameters()):
        np.testing.assert_array_equal(t.data, o.data)


def test_single_blend_in_step():
    critic = _pair(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    online = [p.data.copy() for p in critic.parameters()]
    soft_update(critic, 1.0 - 0.005)
    for p in critic.target_parameters():
        np.testing.assert_allclose(p.data, 0.005, rtol=1e-15)
    for o, p in zip(online, critic.parameters()):
        np.testing.assert_array_equal(p.data, o)


def test_soft_update_rejects_bad_retention():
    with pytest.raises(ConfigurationError):
        soft_update(_pair(np.zeros((2, 2)), np.zeros((2, 2))), 1.5)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000), retention=st.floats(0.0, 1.0))
def test_targets_contract_toward_online(seed, retention):
    r = np.random.default_rng(seed)
    critic = CriticPair.init(2, 2, (4,), r)
    for p in critic.parameters():
        p.data += r.normal(size=p.data.shape)

    def gap():
        return np.sqrt(sum(np.sum((t.data - o.data) ** 2)
                           for t, o in zip(critic.target_parameters(), critic.parameters())))

    prev = gap()
    for _ in range(5):
        soft_update(critic, retention)
        cur = gap()
        assert cur <= prev + 1e-12
        prev = cur


def test_qnet_output_shape(rng):
    q = QNet.init(3, 2, (6,), rng)
    assert q(rng.normal(size=(4, 3)), rng.normal(size=(4, 2))).shape == (4,)


# -- tabular oracle --------------------------------------------------------
def test_tabular_pipeline_converges_to_exact_q():
    # 2 states, 2 actions, stochastic transitions, deterministic policy pi(s0)=a1, pi(s1)=a0
    gamma = 0.9
    R = np.array([[1.0, 0.0], [-0.5, 2.0]])
    P = np.array([[[0.7, 0.3], [0.2, 0.8]],
                  [[0.5, 0.5], [0.9, 0.1]]])  # P[s, a, s']
    pi = np.array([1, 0])
    # exact Q^pi: Q = R + gamma * P @ Q[s', pi(s')]
    n = 4
    A = np.eye(n)
    for s in range(2):
        for a in range(2):
            for s2 in range(2):
                A[2 * s + a, 2 * s2 + pi[s2]] -= gamma * P[s, a, s2]
    q_exact = np.linalg.solve(A, R.reshape(-1)).reshape(2, 2)

    eye = np.eye(2)
    rows = [(s, a, s2) for s in range(2) for a in range(2) for s2 in range(2)]
    batch = BellmanBatch(eye[[r[0] for r in rows]], eye[[r[1] for r in rows]],
                         np.array([R[s, a] for s, a, _ in rows]), eye[[r[2] for r in rows]],
                         np.zeros(len(rows)), gamma)
    weights = np.array([P[s, a, s2] for s, a, s2 in rows])
    next_actions = eye[[pi[s2] for _, _, s2 in rows]]

    critic = _pair(np.zeros((2, 2)), np.full((2, 2), 3.0))
    for _ in range(400):
        y = bellman_target(critic, batch, next_actions)
        # exact regression: the weighted least-squares minimiser of critic_loss per (s, a)
        fit = np.zeros((2, 2))
        for (s, a, _), yi, wi in zip(rows, y, weights):
            fit[s, a] += wi * yi
        for q in (critic.q1, critic.q2):
            q.w.data[...] = fit
        soft_update(critic, 0.0)
    assert np.max(np.abs(critic.q1.w.data - q_exact)) < 1e-6
