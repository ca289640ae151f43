import logging
import math

import numpy as np
import pytest

from hire.approximators import Mlp
from hire.normalization import NONE, RMS, NormConfig
from hire.rewards import E3B, ICM, NGU, RE3, Rollout, make_module, pseudo_count, rollout_knn_log_dists, sherman_morrison
from hire.rewards.knn import EpisodicMemory, knn_sq_dists
from gradcheck import CHECKS
from oracles import brute_pseudo_count, brute_re3, direct_inverse

OBS, ACT = 12, 5


def random_rollout(rng, T=8, E=3, obs_dim=OBS, done_p=0.1):
    obs = (rng.random((T + 1, E, obs_dim)) < 0.3).astype(np.float32)
    dones = rng.random((T, E)) < done_p
    return Rollout(obs[:-1], rng.integers(0, ACT, (T, E)), obs[1:], dones)


def build(name, E=3, **kw):
    return make_module(name, OBS, ACT, E, rng=np.random.default_rng(0), hidden=16, **kw)


# -- kNN ------------------------------------------------------------------------------

def test_pseudo_count_examples():
    assert pseudo_count(np.zeros(3), np.zeros((0, 3)), c=1e-3) == 1e-3
    mem = np.tile([1.0, 2.0, 3.0], (10, 1))
    assert pseudo_count(np.array([1.0, 2.0, 3.0]), mem, k=10, dm2=0.7, c=1e-3) == pytest.approx(math.sqrt(10) + 1e-3)


def test_pseudo_count_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mem = rng.normal(size=(50, 8))
        q = rng.normal(size=8)
        dm2 = float(rng.uniform(0.5, 5))
        got = pseudo_count(q, mem, 10, dm2, 1e-4, 1e-3)
        assert abs(got - brute_pseudo_count(q, mem, 10, dm2, 1e-4, 1e-3)) <= 1e-10


def test_knn_sq_dists_short_memory():
    d = knn_sq_dists(np.zeros(2), np.array([[3.0, 4.0], [1.0, 0.0]]), k=10)
    np.testing.assert_array_equal(d, [1.0, 25.0])


def test_re3_examples():
    emb = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert rollout_knn_log_dists(emb, 1)[0] == pytest.approx(math.log(6), abs=1e-12)
    dup = np.array([[1.0, 1.0], [1.0, 1.0], [9.0, 9.0]])
    assert rollout_knn_log_dists(dup, 1)[0] == 0.0


def test_re3_matches_bruteforce():
    emb = np.random.default_rng(1).normal(size=(64, 6))
    np.testing.assert_allclose(rollout_knn_log_dists(emb, 3), brute_re3(emb, 3), rtol=0, atol=1e-8)


def test_episodic_memory_grows():
    m = EpisodicMemory(2, capacity=2)
    for i in range(5):
        m.add([i, i])
    assert len(m) == 5 and m.items[-1].tolist() == [4, 4]
    m.clear()
    assert len(m) == 0


# -- ellipsoid ------------------------------------------------------------------------

def test_sherman_morrison_examples():
    bonus, _ = sherman_morrison(np.eye(4), np.eye(4)[2])
    assert bonus == 1.0
    inv = np.eye(3) * 10
    bonus, new = sherman_morrison(inv, np.zeros(3))
    assert bonus == 0 and np.array_equal(new, inv)


@pytest.mark.parametrize("d", [4, 8, 16])
def test_sherman_morrison_chain(d):
    rng = np.random.default_rng(d)
    phis = rng.normal(size=(100, d))
    inv = np.eye(d) / 0.1
    for p in phis:
        _, inv = sherman_morrison(inv, p)
    np.testing.assert_allclose(inv, direct_inverse(phis, 0.1), rtol=0, atol=1e-6)


def test_e3b_boundary_reset():
    m = E3B(OBS, ACT, 2, rng=0, hidden=8, embed_dim=4, ridge=1.0)
    m.observe(0, np.ones(4))
    m.on_episode_boundary(0)
    assert m.observe(0, np.eye(4)[1]) == pytest.approx(1.0)


# -- NGU ------------------------------------------------------------------------------

def test_ngu_lifelong_clamp():
    m = NGU(OBS, ACT, 1, rng=0, hidden=8, embed_dim=4)
    m.err_rms.mean, m.err_rms.var, m.err_rms.count = np.float64(1.0), np.float64(1.0), 10.0
    scale, alpha = m.lifelong(np.array([0.5, 1.0, 10.0]))
    assert scale.tolist() == pytest.approx([1.0, 1.0, 5.0])
    assert alpha[2] == pytest.approx(10.0)


def test_ngu_first_state_bonus_is_inverse_floor():
    m = NGU(OBS, ACT, 1, rng=0, hidden=8, embed_dim=4, seed_episode_start=False)
    ro = random_rollout(np.random.default_rng(0), T=1, E=1, done_p=0)
    m.compute(ro)
    # alpha = 1 with a single error sample, memory empty -> 1 / c
    assert m.last_raw[0, 0] == pytest.approx(1 / m.c)


def test_ngu_boundary_clears_memory():
    m = NGU(OBS, ACT, 2, rng=0, hidden=8, embed_dim=4)
    m.compute(random_rollout(np.random.default_rng(0), T=6, E=2, done_p=0))
    assert len(m.memories[1]) > 0
    m.on_episode_boundary(1)
    assert len(m.memories[1]) == 0
    assert m.episodic_count(np.ones(4), 1) == m.c


def test_ngu_numerator_bounds():
    m = NGU(OBS, ACT, 3, rng=0, hidden=8, embed_dim=4)
    rng = np.random.default_rng(2)
    for _ in range(5):
        m.compute(random_rollout(rng))
        assert np.all(np.clip(m.last_alpha, 1, m.max_scale) >= 1)
        assert np.all(np.isfinite(m.last_raw)) and np.all(m.last_raw > 0)
        assert np.all(m.last_raw <= m.max_scale / m.c + 1e-9)


def test_ngu_memory_seeded_with_start_observation():
    m = NGU(OBS, ACT, 1, rng=0, hidden=8, embed_dim=4)
    ro = random_rollout(np.random.default_rng(0), T=3, E=1, done_p=0)
    m.compute(ro)
    assert len(m.memories[0]) == 4  # start obs + 3 successors


# -- ICM ------------------------------------------------------------------------------

def _identity_icm():
    m = ICM(2, 2, 1, rng=0, hidden=4, embed_dim=2, norm=NormConfig(NONE, RMS), dtype=np.float64)
    m.encoder = Mlp([np.eye(2)], [np.zeros(2)], ["identity"])
    m.forward_model = Mlp([np.zeros((2, 4))], [np.array([1.0, 0.0])], ["identity"])
    return m


def test_icm_raw_examples():
    m = _identity_icm()
    ro = Rollout(np.zeros((1, 1, 2)), np.zeros((1, 1), int), np.array([[[0.0, 1.0]]]), np.zeros((1, 1), bool))
    assert m.compute_raw(ro)[0, 0] == pytest.approx(2.0)
    ro = Rollout(np.zeros((1, 1, 2)), np.zeros((1, 1), int), np.array([[[1.0, 0.0]]]), np.zeros((1, 1), bool))
    assert m.compute_raw(ro)[0, 0] == 0.0


def test_icm_raw_matches_scalar_loop():
    m = build("ICM")
    ro = random_rollout(np.random.default_rng(3))
    raw = m.compute_raw(ro)
    obs, act, nxt = m.transitions(ro)
    obs, nxt = m.normalize_pair(obs, nxt)
    pred, e2 = m.predict(obs, act, nxt)
    for i in range(len(act)):
        want = sum((float(p) - float(q)) ** 2 for p, q in zip(pred[i], e2[i]))
        assert raw.reshape(-1)[i] == pytest.approx(want, rel=1e-6)


def toy_chain(T=16, E=2):
    # two states, action 0 from A leads to B and action 1 from B leads to A
    a, b = np.zeros(OBS, np.float32), np.zeros(OBS, np.float32)
    a[0], b[1] = 1, 1
    obs = np.stack([a if t % 2 == 0 else b for t in range(T + 1)])
    obs = np.repeat(obs[:, None], E, axis=1)
    acts = np.tile((np.arange(T) % 2)[:, None], (1, E))
    return Rollout(obs[:-1], acts, obs[1:], np.zeros((T, E), bool))


@pytest.mark.parametrize("name", ["ICM", "E3B"])
def test_update_loss_decreases_on_toy_chain(name):
    # at lr 1e-3 the jointly trained ICM encoder drags the forward target around for ~20 steps
    m = build(name, E=2, lr=3e-4 if name == "ICM" else 1e-3)
    ro = toy_chain()
    losses = []
    for _ in range(100):
        m.update(ro, 1.0)
        losses.append(m.last_forward_loss if name == "ICM" else m.last_loss)
    ups = sum(b > a for a, b in zip(losses, losses[1:]))
    assert ups <= 5
    assert losses[-1] < losses[0]


@pytest.mark.parametrize("name", ["ICM", "E3B", "NGU"])
def test_update_uses_every_transition_once(name):
    m = build(name)
    ro = random_rollout(np.random.default_rng(0), T=10, E=3)
    m.update(ro, 1.0)
    assert sorted(m.last_update_indices.tolist()) == list(range(30))
    m.update(ro, 0.5)
    assert len(set(m.last_update_indices.tolist())) == 15
    with pytest.raises(ValueError):
        m.update(ro, 0.0)


@pytest.mark.parametrize("name", ["ICM", "E3B", "NGU"])
def test_update_deterministic(name):
    a, b = build(name), build(name)
    ro = random_rollout(np.random.default_rng(0))
    a.update(ro)
    b.update(ro)
    for (_, x), (_, y) in zip(a.nets().items(), b.nets().items()):
        for p, q in zip(x.arrays(), y.arrays()):
            np.testing.assert_array_equal(p, q)


# -- shared interface ------------------------------------------------------------------

@pytest.mark.parametrize("name", ["ICM", "NGU", "RE3", "E3B"])
def test_compute_is_pure_in_parameters(name):
    m = build(name)
    ro = random_rollout(np.random.default_rng(4))
    before = [p.copy() for net in m.nets().values() for p in net.arrays()]
    twin = m.clone()
    out1, out2 = m.compute(ro), twin.compute(ro)
    np.testing.assert_array_equal(out1, out2)
    after = [p for net in m.nets().values() for p in net.arrays()]
    for p, q in zip(before, after):
        np.testing.assert_array_equal(p, q)


@pytest.mark.parametrize("name", ["ICM", "NGU", "RE3", "E3B"])
def test_bonuses_finite_nonnegative(name):
    m = build(name)
    rng = np.random.default_rng(5)
    for _ in range(4):
        ro = random_rollout(rng)
        out = m.compute(ro)
        assert out.shape == (8, 3)
        assert np.all(np.isfinite(out)) and np.all(out >= 0)
        assert np.all(m.last_raw >= 0)
        m.update(ro)


def test_episode_boundary_contracts():
    icm = build("ICM")
    state = [p.copy() for p in icm._arrays()]
    icm.on_episode_boundary(1)
    for p, q in zip(state, icm._arrays()):
        np.testing.assert_array_equal(p, q)
    with pytest.raises(IndexError):
        icm.on_episode_boundary(3)


def test_re3_short_rollout_warns(caplog):
    m = build("RE3")
    with caplog.at_level(logging.WARNING):
        out = m.compute(random_rollout(np.random.default_rng(0), T=3))
    assert "k=2" in caplog.text and out.shape == (3, 3)


def test_re3_encoder_is_fixed():
    m = build("RE3")
    w = m.encoder.weights[0].copy()
    m.update(random_rollout(np.random.default_rng(0)))
    np.testing.assert_array_equal(w, m.encoder.weights[0])


def test_reward_normalization_modes():
    ro = random_rollout(np.random.default_rng(0))
    a = build("ICM")
    a.compute(ro)
    assert a.reward_rms.count == 24
    b = build("ICM", reward_stats="returns")
    b.compute(ro)
    np.testing.assert_allclose(b.int_returns, np.sum(0.99 ** np.arange(7, -1, -1)[:, None] * b.last_raw, axis=0))


def test_state_dict_roundtrip():
    m = build("NGU")
    m.compute(random_rollout(np.random.default_rng(0)))
    twin = build("NGU")
    twin.load_state_dict(m.state_dict())
    assert twin.dm2_mean == m.dm2_mean
    np.testing.assert_array_equal(twin.obs_rms.mean, m.obs_rms.mean)


def test_make_module_rejects_unknown():
    with pytest.raises(ValueError):
        make_module("RND", OBS, ACT, 1)


@pytest.mark.parametrize("name", list(CHECKS))
def test_gradients_match_finite_differences(name):
    for seed in range(5):
        assert CHECKS[name](np.random.default_rng(seed)) < 1e-4
