import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from dacer.entropy import (JITTER, AlphaState, GmmModel, NoiseMode, apply_exploration_noise,
                           decay_alpha, em_fit, estimate_policy_entropy, gmm_entropy,
                           responsibilities, update_alpha)
from dacer.errors import ContractError, NumericFaultError


def _mixture_entropy_1d(w, mu, sd):
    """-int p log p by adaptive quadrature over a range covering every component."""
    w, mu, sd = map(np.asarray, (w, mu, sd))

    def p(x):
        return float(np.sum(w * norm.pdf(x, mu, sd)))

    def integrand(x):
        px = p(x)
        return -px * math.log(px) if px > 0 else 0.0

    lo, hi = float(np.min(mu - 12 * sd)), float(np.max(mu + 12 * sd))
    pts = sorted(set(np.round(mu, 12)))
    val, _ = quad(integrand, lo, hi, points=pts, limit=500, epsabs=1e-11, epsrel=1e-11)
    return val


def _ll_nondecreasing(trace):
    # the covariance jitter can move the likelihood by ~1e-16 relative; allow that much
    return all(b >= a - 1e-10 * (1 + abs(a)) for a, b in zip(trace, trace[1:]))


# -- em_fit ----------------------------------------------------------------
def test_single_component_is_sample_moments(rng):
    x = rng.normal(size=(300, 2)) @ np.array([[1.0, 0.3], [0.0, 0.5]]) + [1.0, -2.0]
    m = em_fit(x, K=1, rng=rng)
    assert m.weights[0] == pytest.approx(1.0)
    np.testing.assert_allclose(m.means[0], x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(m.covs[0], np.cov(x, rowvar=False, bias=True) + JITTER * np.eye(2),
                               atol=1e-12)


def test_identical_components_give_uniform_responsibilities(rng):
    x = rng.normal(size=(50, 2))
    K = 3
    model = GmmModel(np.full(K, 1 / K), np.zeros((K, 2)), np.repeat(np.eye(2)[None], K, axis=0))
    gamma, _ = responsibilities(x, model)
    np.testing.assert_allclose(gamma, 1 / K, rtol=1e-14)


def test_three_component_recovery(rng):
    true_w = np.array([0.3, 0.3, 0.4])
    true_mu = np.array([[-4.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    true_cov = np.array([np.diag([0.5, 0.3]), [[0.4, 0.1], [0.1, 0.4]], np.diag([0.3, 0.6])])
    counts = rng.multinomial(600, true_w)
    x = np.concatenate([rng.multivariate_normal(m, c, size=n) for m, c, n in zip(true_mu, true_cov, counts)])
    fit = em_fit(x, K=3, rng=np.random.default_rng(3))
    # optimal permutation via nearest true mean (means are far apart)
    for mu in true_mu:
        assert np.min(np.linalg.norm(fit.means - mu, axis=1)) < 0.1
    _, ll_true = responsibilities(x, GmmModel(true_w, true_mu, true_cov))
    assert abs(fit.log_likelihood[-1] - ll_true) < 0.01 * abs(ll_true)
    assert _ll_nondecreasing(fit.log_likelihood)


def test_em_rejects_too_few_samples():
    with pytest.raises(ContractError):
        em_fit(np.zeros((2, 2)), K=3)


def test_collapsed_component_is_reseeded():
    # two distinct points and K=3: one component must lose all its mass
    x = np.array([[0.0], [0.0], [0.0], [10.0], [10.0], [10.0]])
    m = em_fit(x, K=3, rng=np.random.default_rng(0))
    assert np.all(np.isfinite(m.means)) and np.all(m.weights > 0)
    assert np.sum(m.weights) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), K=st.integers(1, 4), d=st.integers(1, 3))
def test_em_likelihood_never_decreases(seed, K, d):
    r = np.random.default_rng(seed)
    centers = r.normal(scale=3, size=(K, d))
    x = centers[r.integers(K, size=120)] + r.normal(size=(120, d)) * r.uniform(0.2, 1.5)
    m = em_fit(x, K=K, rng=r)
    assert _ll_nondecreasing(m.log_likelihood)
    assert np.sum(m.weights) == pytest.approx(1.0, abs=1e-9)
    gamma, _ = responsibilities(x, m)
    np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-12)
    for c in m.covs:
        np.testing.assert_array_equal(c, c.T)
        assert np.all(np.linalg.eigvalsh(c) > 0)


# -- gmm_entropy -----------------------------------------------------------
def test_unit_gaussian_entropy_2d():
    m = GmmModel(np.ones(1), np.zeros((1, 2)), np.eye(2)[None])
    assert gmm_entropy(m) == pytest.approx(1 + math.log(2 * math.pi), abs=1e-12)
    assert gmm_entropy(m) == pytest.approx(2.8379, abs=5e-5)


def test_two_equal_unit_components_1d():
    m = GmmModel(np.array([0.5, 0.5]), np.array([[0.0], [3.0]]), np.ones((2, 1, 1)))
    expected = math.log(2) + 0.5 * math.log(2 * math.pi * math.e)
    assert gmm_entropy(m) == pytest.approx(expected, abs=1e-12)
    assert gmm_entropy(m) == pytest.approx(2.1121, abs=5e-5)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), c=st.floats(1.01, 10.0))
def test_scaling_covariances_increases_entropy(seed, c):
    r = np.random.default_rng(seed)
    K, d = 3, 2
    A = r.normal(size=(K, d, d))
    covs = A @ A.transpose(0, 2, 1) + 0.1 * np.eye(d)
    m = GmmModel(r.dirichlet(np.ones(K)), r.normal(size=(K, d)), covs)
    scaled = GmmModel(m.weights, m.means, covs * c)
    assert gmm_entropy(scaled) > gmm_entropy(m)


def test_non_pd_covariance_is_a_numeric_fault():
    m = GmmModel(np.ones(1), np.zeros((1, 2)), np.array([[[1.0, 2.0], [2.0, 1.0]]]))
    with pytest.raises(NumericFaultError):
        gmm_entropy(m)


@pytest.mark.parametrize("seed", range(5))
def test_surrogate_upper_bounds_true_mixture_entropy(seed):
    r = np.random.default_rng(seed)
    K = r.integers(2, 5)
    w = r.dirichlet(np.ones(K))
    mu = r.uniform(-3, 3, K)
    sd = r.uniform(0.2, 1.5, K)
    true_h = _mixture_entropy_1d(w, mu, sd)
    surrogate = gmm_entropy(GmmModel(w, mu[:, None], (sd ** 2)[:, None, None]))
    assert surrogate >= true_h


def test_quadrature_oracle_on_single_gaussian():
    assert _mixture_entropy_1d([1.0], [0.4], [0.7]) == pytest.approx(
        0.5 * math.log(2 * math.pi * math.e * 0.49), abs=1e-8)


# -- estimate_policy_entropy -----------------------------------------------
class GaussianSampler:
    def __init__(self, center, sigma):
        self.center, self.sigma = np.asarray(center, float), sigma

    def act(self, states, rng):
        return self.center + self.sigma * rng.standard_normal((len(states), len(self.center)))


def test_degenerate_gaussian_limit():
    sigma, d = 1e-2, 2
    h = estimate_policy_entropy(GaussianSampler([0.3, -0.2], sigma), np.zeros((4, 1)), 200, 3,
                                np.random.default_rng(0))
    expected = d * math.log(sigma * math.sqrt(2 * math.pi * math.e))
    assert abs(h - expected) < 0.1 * abs(expected)


def test_identical_states_give_exchangeable_estimates():
    sampler = GaussianSampler([0.0, 0.0], 0.3)
    r = np.random.default_rng(7)
    per_state = [estimate_policy_entropy(sampler, np.zeros((1, 2)), 200, 3, r) for _ in range(16)]
    assert np.std(per_state) < 0.2


def test_entropy_estimate_rejects_empty_states():
    with pytest.raises(ContractError):
        estimate_policy_entropy(GaussianSampler([0.0], 0.1), np.zeros((0, 1)))


# -- alpha regulator -------------------------------------------------------
def test_worked_alpha_update():
    st_ = AlphaState(alpha=0.27, lr=0.03, target_entropy=-1.8)
    update_alpha(st_, -2.0)
    assert st_.alpha == pytest.approx(0.276, abs=1e-15)


def test_alpha_fixed_point():
    st_ = AlphaState(alpha=0.31, target_entropy=-1.8)
    update_alpha(st_, -1.8)
    assert st_.alpha == 0.31


def test_alpha_decreases_to_floor_when_entropy_too_high():
    st_ = AlphaState(alpha=0.27, lr=0.03, target_entropy=-1.8)
    seen = [st_.alpha]
    for _ in range(10):
        update_alpha(st_, 0.0)
        seen.append(st_.alpha)
    positive = [a for a in seen if a > 0]
    assert all(b < a for a, b in zip(positive, positive[1:]))
    assert seen[-1] == 0.0 and min(seen) >= 0.0


def test_alpha_increases_when_entropy_too_low():
    st_ = AlphaState(alpha=0.0, lr=0.03, target_entropy=-1.8)
    prev = st_.alpha
    for _ in range(5):
        update_alpha(st_, -3.0)
        assert st_.alpha > prev
        prev = st_.alpha


def test_non_finite_entropy_leaves_alpha():
    st_ = AlphaState(alpha=0.27)
    with pytest.raises(NumericFaultError):
        update_alpha(st_, float("nan"))
    assert st_.alpha == 0.27


@pytest.mark.parametrize("mode", ["fixed", "linear", "none"])
def test_only_adaptive_mode_moves_alpha_on_entropy(mode):
    st_ = AlphaState(alpha=0.1, mode=mode)
    before = st_.alpha
    update_alpha(st_, 5.0)
    assert st_.alpha == before


def test_linear_decay_endpoints():
    st_ = AlphaState(mode=NoiseMode.LINEAR)
    assert decay_alpha(st_, 0.0).alpha == pytest.approx(0.27)
    assert decay_alpha(st_, 0.5).alpha == pytest.approx(0.185)
    assert decay_alpha(st_, 1.0).alpha == pytest.approx(0.1)
    assert decay_alpha(st_, 2.0).alpha == pytest.approx(0.1)


# -- exploration noise -----------------------------------------------------
def test_eval_mode_and_zero_alpha_are_identity(rng):
    a = rng.uniform(-1, 1, size=(10, 2))
    assert apply_exploration_noise(a, AlphaState(alpha=0.27), rng, eval_mode=True) is a
    assert np.array_equal(apply_exploration_noise(a, AlphaState(alpha=0.0), rng), a)
    assert np.array_equal(apply_exploration_noise(a, AlphaState(mode="none"), rng), a)


def test_noise_std_matches_lambda_alpha(rng):
    n = 100_000
    a = np.zeros((n, 2))
    diff = apply_exploration_noise(a, AlphaState(alpha=0.27, noise_scale=0.1), rng) - a
    sd = diff.std(axis=0, ddof=1)
    se = 0.027 / math.sqrt(2 * (n - 1))
    assert np.all(np.abs(sd - 0.027) < 3 * se)


def test_noisy_actions_stay_in_bounds(rng):
    a = np.full((1000, 2), 0.999)
    out = apply_exploration_noise(a, AlphaState(alpha=5.0, noise_scale=1.0), rng)
    assert np.all(np.abs(out) <= 1.0)
