import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hire.ppo import ActorCritic, PPOAgent, PpoConfig, RolloutBuffer, compute_gae, normalize_advantages, \
    ppo_loss_and_grads, sample_action
from oracles import gae_direct


def test_uniform_entropy():
    _, _, ent = sample_action(np.zeros((3, 5)), np.random.default_rng(0))
    np.testing.assert_allclose(ent, math.log(5))


def test_dominant_logit():
    logits = np.zeros((1000, 5))
    logits[:, 3] = 100
    a, logp, _ = sample_action(logits, np.random.default_rng(0))
    assert np.all(a == 3) and np.allclose(logp, 0)


def test_sampling_frequencies_match_softmax():
    logits = np.array([0.5, -1.0, 2.0, 0.0, 0.3])
    p = np.exp(logits) / np.exp(logits).sum()
    a, logp, _ = sample_action(np.tile(logits, (100_000, 1)), np.random.default_rng(1))
    freq = np.bincount(a, minlength=5) / len(a)
    assert np.max(np.abs(freq - p)) < 0.01
    np.testing.assert_allclose(logp, np.log(p[a]))


def test_non_finite_logits_rejected():
    with pytest.raises(ValueError):
        sample_action(np.array([[0.0, np.nan]]), np.random.default_rng(0))


def test_gae_single_step():
    adv, ret = compute_gae([[1.0]], [[0.5], [2.0]], [[False]], 0.9, 0.95)
    assert adv[0, 0] == pytest.approx(1.0 + 0.9 * 2.0 - 0.5)
    assert ret[0, 0] == pytest.approx(adv[0, 0] + 0.5)


def test_gae_done_truncates():
    adv, _ = compute_gae([[1.0], [5.0]], [[0.3], [9.0], [9.0]], [[True], [False]], 0.99, 0.95)
    assert adv[0, 0] == pytest.approx(1.0 - 0.3)


@settings(max_examples=200, deadline=None)
@given(T=st.integers(1, 32), seed=st.integers(0, 2 ** 32 - 1))
def test_gae_matches_direct_sum(T, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=(T, 3)), rng.normal(size=(T + 1, 3))
    d = rng.random((T, 3)) < 0.3
    adv, ret = compute_gae(r, v, d, 0.99, 0.95)
    for e in range(3):
        np.testing.assert_allclose(adv[:, e], gae_direct(r[:, e], v[:, e], d[:, e], 0.99, 0.95), rtol=0, atol=1e-10)
    np.testing.assert_allclose(ret, adv + v[:-1])


def _net(seed=0, obs_dim=6, n_act=4):
    return ActorCritic(obs_dim, n_act, (8, 8), np.random.default_rng(seed), dtype=np.float64)


def test_surrogate_at_unit_ratio():
    net = _net()
    rng = np.random.default_rng(0)
    obs, act = rng.normal(size=(10, 6)), rng.integers(0, 4, 10)
    logits, v, _ = net.forward(obs)
    logp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    adv = rng.normal(size=10)
    _, _, stats = ppo_loss_and_grads(net, obs, act, logp[np.arange(10), act], v, adv, v, PpoConfig())
    assert stats["pg_loss"] == pytest.approx(-adv.mean())
    assert stats["clipfrac"] == 0 and stats["v_loss"] == 0


def test_clipped_branch_selected():
    net = _net()
    obs, act = np.zeros((1, 6)), np.array([1])
    logits, v, _ = net.forward(obs)
    logp = (logits - np.log(np.exp(logits).sum()))[0, 1]
    # old log-prob chosen so that ratio = 2
    _, _, stats = ppo_loss_and_grads(net, obs, act, np.array([logp - math.log(2)]), v, np.array([1.0]),
                                     v, PpoConfig(clip_range=0.1))
    assert stats["pg_loss"] == pytest.approx(-1.1)
    assert stats["clipfrac"] == 1


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 200))
def test_advantage_normalization_moments(seed, n):
    adv = np.random.default_rng(seed).normal(3, 5, size=n)
    z = normalize_advantages(adv)
    assert abs(z.mean()) < 1e-6 and abs(z.std() - 1) < 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(epochs=0)
    with pytest.raises(ValueError):
        PpoConfig(gamma=1.5)
    assert PpoConfig().batch_size == 512 and PpoConfig(total_steps=5120).iterations == 10


def _filled_buffer(seed=0, T=8, E=4, obs_dim=6):
    rng = np.random.default_rng(seed)
    buf = RolloutBuffer(T, E, obs_dim)
    buf.obs[:] = rng.normal(size=buf.obs.shape)
    buf.actions[:] = rng.integers(0, 4, (T, E))
    buf.logps[:] = np.log(0.25)
    buf.values[:] = rng.normal(size=buf.values.shape) * 0.1
    buf.dones[:] = rng.random((T, E)) < 0.1
    return buf


def _agent(seed=0):
    cfg = PpoConfig(rollout_len=8, num_envs=4, minibatch_size=8, hidden=(8, 8))
    return PPOAgent(6, 4, cfg, rng=seed)


def test_learn_requires_rewards():
    with pytest.raises(ValueError):
        _agent().learn(_filled_buffer())
    with pytest.raises(ValueError):
        _filled_buffer().set_rewards(np.zeros((3, 3)))


def test_learner_is_candidate_agnostic():
    """Two reward sources through one loop: parameters differ only through the reward inputs."""
    rng = np.random.default_rng(3)
    extrinsic = rng.normal(size=(8, 4))
    hybrid = extrinsic + 0.25 * rng.random((8, 4))
    out = {}
    for name, rewards in [("a", extrinsic), ("b", extrinsic), ("c", hybrid)]:
        agent, buf = _agent(), _filled_buffer()
        buf.set_rewards(rewards)
        agent.learn(buf)
        out[name] = np.concatenate([p.ravel() for p in agent.net.arrays()])
    np.testing.assert_array_equal(out["a"], out["b"])
    assert not np.array_equal(out["a"], out["c"])


def test_learn_reduces_loss_on_fixed_batch():
    agent, buf = _agent(), _filled_buffer()
    buf.set_rewards(np.random.default_rng(1).normal(size=(8, 4)))
    first = agent.learn(buf)["v_loss"]
    for _ in range(30):
        last = agent.learn(buf)["v_loss"]
    assert last < first
