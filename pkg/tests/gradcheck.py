"""Finite-difference checks for every learned network, on small random 64-bit configurations."""
import numpy as np

from hire.ppo import ActorCritic, PpoConfig, log_softmax, ppo_loss_and_grads
from hire.rewards import E3B, ICM, NGU
from oracles import numeric_grads, rel_error


def _jitter_biases(rng, nets):
    # zero biases put ReLU kinks exactly at zero pre-activations; move off them
    for net in nets:
        for b in net.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)


def _batch(rng, n, obs_dim, n_actions):
    obs = rng.normal(size=(n, obs_dim))
    nxt = rng.normal(size=(n, obs_dim))
    act = rng.integers(0, n_actions, size=n)
    return obs, act, nxt


def icm_error(rng):
    obs_dim, n_act = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    m = ICM(obs_dim, n_act, 1, rng=rng, hidden=int(rng.integers(3, 8)), embed_dim=int(rng.integers(2, 5)),
            forward_weight=float(rng.uniform(0.1, 0.9)), dtype=np.float64)
    _jitter_biases(rng, m.nets().values())
    obs, act, nxt = _batch(rng, int(rng.integers(2, 6)), obs_dim, n_act)
    _, grads, _ = m.loss_and_grads(obs, act, nxt)
    num = numeric_grads(lambda: m.loss_and_grads(obs, act, nxt)[0], m._arrays())
    return rel_error(grads, num)


def ngu_error(rng):
    obs_dim = int(rng.integers(2, 6))
    m = NGU(obs_dim, 3, 1, rng=rng, hidden=int(rng.integers(3, 8)), embed_dim=int(rng.integers(2, 5)),
            dtype=np.float64)
    _jitter_biases(rng, m.nets().values())
    x = rng.normal(size=(int(rng.integers(2, 6)), obs_dim))
    _, grads = m.loss_and_grads(x)
    num = numeric_grads(lambda: m.loss_and_grads(x)[0], m.predictor.arrays())
    return rel_error(grads, num)


def e3b_error(rng):
    obs_dim, n_act = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    m = E3B(obs_dim, n_act, 1, rng=rng, hidden=int(rng.integers(3, 8)), embed_dim=int(rng.integers(2, 5)),
            dtype=np.float64)
    _jitter_biases(rng, m.nets().values())
    obs, act, nxt = _batch(rng, int(rng.integers(2, 6)), obs_dim, n_act)
    _, grads, _ = m.loss_and_grads(obs, act, nxt)
    num = numeric_grads(lambda: m.loss_and_grads(obs, act, nxt)[0], m.encoder.arrays() + m.inverse.arrays())
    return rel_error(grads, num)


def policy_error(rng):
    obs_dim, n_act = int(rng.integers(2, 6)), int(rng.integers(2, 5))
    h = int(rng.integers(3, 8))
    net = ActorCritic(obs_dim, n_act, (h, h), rng, dtype=np.float64)
    _jitter_biases(rng, net.nets().values())
    n = int(rng.integers(2, 8))
    obs = rng.normal(size=(n, obs_dim))
    act = rng.integers(0, n_act, size=n)
    logits, values, _ = net.forward(obs)
    logp = log_softmax(logits)[np.arange(n), act]
    # perturbed "old" quantities so that some clipping branches are active
    old_logp = logp + rng.normal(scale=0.2, size=n)
    old_v = values + rng.normal(scale=0.2, size=n)
    adv, ret = rng.normal(size=n), rng.normal(size=n)
    cfg = PpoConfig()
    _, grads, _ = ppo_loss_and_grads(net, obs, act, old_logp, old_v, adv, ret, cfg)
    num = numeric_grads(lambda: ppo_loss_and_grads(net, obs, act, old_logp, old_v, adv, ret, cfg)[0],
                        net.arrays())
    return rel_error(grads, num)


CHECKS = {"ICM": icm_error, "NGU": ngu_error, "E3B": e3b_error, "policy": policy_error}
