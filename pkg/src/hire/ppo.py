"""PPO with clipped surrogate, clipped value loss, entropy bonus and GAE.

The agent never sees how its rewards were produced: `collect` fills a buffer
with extrinsic rewards, the caller writes `buffer.rewards`, then `learn` runs.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .approximators import Adam, Mlp, backward, clip_grad_norm, forward, orthogonal_init
from .rewards.base import Rollout, softmax


@dataclass
class PpoConfig:
    rollout_len: int = 32
    num_envs: int = 16
    lr: float = 2.5e-4
    gae_lambda: float = 0.95
    gamma: float = 0.99
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    clip_range: float = 0.1
    max_grad_norm: float = 0.5
    epochs: int = 4
    minibatch_size: int = 64     # 1024 scaled by num_envs/256
    total_steps: int = 500_000
    hidden: tuple = (256, 256)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        for f in ("rollout_len", "num_envs", "epochs", "minibatch_size", "total_steps"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")

    @property
    def batch_size(self):
        return self.rollout_len * self.num_envs

    @property
    def iterations(self):
        return max(1, self.total_steps // self.batch_size)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# -- policy ---------------------------------------------------------------------------

def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_action(logits, rng: np.random.Generator):
    """Categorical sample per row. Returns (actions, log-probs, entropies)."""
    logits = np.asarray(logits, np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    logp = log_softmax(logits)
    p = np.exp(logp)
    u = rng.random(len(logits))[:, None]
    actions = np.minimum((np.cumsum(p, axis=1) < u).sum(axis=1), logits.shape[1] - 1)
    rows = np.arange(len(logits))
    entropy = -(p * logp).sum(axis=1)
    return actions, logp[rows, actions], entropy


class ActorCritic:
    """Shared ReLU trunk with separate policy and value heads."""

    def __init__(self, obs_dim, n_actions, hidden=(256, 256), rng=None, dtype=np.float32):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.trunk = orthogonal_init([obs_dim, *hidden], rng, gain=np.sqrt(2), out_gain=np.sqrt(2),
                                     out_activation="relu", dtype=dtype)
        self.pi = orthogonal_init([hidden[-1], n_actions], rng, out_gain=0.01, dtype=dtype)
        self.v = orthogonal_init([hidden[-1], 1], rng, out_gain=1.0, dtype=dtype)

    def nets(self) -> dict[str, Mlp]:
        return {"trunk": self.trunk, "pi": self.pi, "v": self.v}

    def arrays(self):
        return self.trunk.arrays() + self.pi.arrays() + self.v.arrays()

    def forward(self, obs):
        h, c_trunk = forward(self.trunk, obs)
        logits, c_pi = forward(self.pi, h)
        values, c_v = forward(self.v, h)
        return logits, values[:, 0], (c_trunk, c_pi, c_v)

    def backward(self, caches, g_logits, g_values):
        c_trunk, c_pi, c_v = caches
        g_pi, gh1 = backward(self.pi, c_pi, g_logits, need_input_grad=True)
        g_v, gh2 = backward(self.v, c_v, g_values[:, None], need_input_grad=True)
        g_trunk = backward(self.trunk, c_trunk, gh1 + gh2)
        return g_trunk + g_pi + g_v


# -- advantages -------------------------------------------------------------------

def compute_gae(rewards, values, dones, gamma, lam):
    """Backward GAE recursion. values has T+1 rows (last row is the bootstrap)."""
    rewards = np.asarray(rewards, np.float64)
    values = np.asarray(values, np.float64)
    notdone = 1.0 - np.asarray(dones, np.float64)
    T = len(rewards)
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    for t in reversed(range(T)):
        delta = rewards[t] + gamma * values[t + 1] * notdone[t] - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
    return adv, adv + values[:T]


class RolloutBuffer:
    def __init__(self, T, E, obs_dim):
        self.T, self.E = T, E
        self.obs = np.zeros((T + 1, E, obs_dim), np.float32)
        self.next_obs = np.zeros((T, E, obs_dim), np.float32)
        self.actions = np.zeros((T, E), np.int64)
        self.ext_rewards = np.zeros((T, E))
        self.dones = np.zeros((T, E), bool)
        self.values = np.zeros((T + 1, E))
        self.logps = np.zeros((T, E))
        self.steps = np.zeros((T, E), np.int64)  # per-env cumulative env-step index
        self.rewards = None                      # optimized rewards, written by the caller
        self.advantages = None
        self.returns = None

    def rollout(self) -> Rollout:
        return Rollout(self.obs[:-1], self.actions, self.next_obs, self.dones)

    def set_rewards(self, rewards):
        rewards = np.asarray(rewards, np.float64)
        if rewards.shape != (self.T, self.E):
            raise ValueError(f"rewards shape {rewards.shape} != {(self.T, self.E)}")
        self.rewards = rewards
        self.advantages = self.returns = None


# -- loss -------------------------------------------------------------------------------

def ppo_loss_and_grads(net: ActorCritic, obs, actions, old_logp, old_values, advantages, returns,
                       cfg: PpoConfig):
    """Total loss = policy surrogate + vf_coef * clipped value loss - ent_coef * entropy."""
    n = len(actions)
    rows = np.arange(n)
    logits, values, caches = net.forward(obs)
    logits = logits.astype(np.float64)
    values = values.astype(np.float64)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_logp)
    eps = cfg.clip_range
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1 - eps, 1 + eps) * advantages
    pg_loss = -np.mean(np.minimum(surr1, surr2))
    active = surr1 <= surr2
    g_logp = np.where(active, -advantages * ratio, 0.0) / n
    g_logits = -p * g_logp[:, None]
    g_logits[rows, actions] += g_logp

    ent = -(p * logp_all).sum(axis=1)
    ent_loss = -np.mean(ent)
    g_logits += cfg.ent_coef * p * (logp_all + ent[:, None]) / n

    dv = values - old_values
    v_clip = old_values + np.clip(dv, -eps, eps)
    l1 = np.square(values - returns)
    l2 = np.square(v_clip - returns)
    v_loss = 0.5 * np.mean(np.maximum(l1, l2))
    inside = np.abs(dv) < eps
    g_v = np.where(l1 >= l2, values - returns, np.where(inside, v_clip - returns, 0.0)) / n
    g_v *= cfg.vf_coef

    loss = pg_loss + cfg.vf_coef * v_loss + cfg.ent_coef * ent_loss
    dtype = net.trunk.dtype
    grads = net.backward(caches, g_logits.astype(dtype), g_v.astype(dtype))
    stats = {"loss": float(loss), "pg_loss": float(pg_loss), "v_loss": float(v_loss),
             "entropy": float(-ent_loss), "approx_kl": float(np.mean((ratio - 1) - np.log(ratio))),
             "clipfrac": float(np.mean(np.abs(ratio - 1) > eps))}
    return float(loss), grads, stats


def normalize_advantages(adv):
    return (adv - adv.mean()) / (adv.std() + 1e-8)


class PPOAgent:
    def __init__(self, obs_dim, n_actions, cfg: PpoConfig, rng=None):
        self.cfg = cfg
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.net = ActorCritic(obs_dim, n_actions, cfg.hidden, self.rng)
        self.opt = Adam(self.net.arrays(), lr=cfg.lr)
        self.obs_dim, self.n_actions = obs_dim, n_actions
        self.global_step = 0  # env steps per env

    def act(self, obs):
        logits, values, _ = self.net.forward(obs)
        actions, logp, _ = sample_action(logits, self.rng)
        return actions, logp, values.astype(np.float64)

    def collect(self, env, obs):
        """Run T vector steps from `obs`. Returns (buffer, next obs, finished episodes)."""
        T, E = self.cfg.rollout_len, env.num_envs
        buf = RolloutBuffer(T, E, self.obs_dim)
        episodes = []
        for t in range(T):
            buf.obs[t] = obs
            actions, logp, values = self.act(obs)
            obs, rewards, dones, _, info = env.step(actions)
            buf.actions[t], buf.logps[t], buf.values[t] = actions, logp, values
            buf.ext_rewards[t], buf.dones[t] = rewards, dones
            buf.next_obs[t] = obs
            for i, fo in info["final_obs"].items():
                buf.next_obs[t, i] = fo
            buf.steps[t] = self.global_step
            self.global_step += 1
            episodes += info["episodes"]
        buf.obs[T] = obs
        _, last_v, _ = self.net.forward(obs)
        buf.values[T] = last_v
        return buf, obs, episodes

    def learn(self, buf: RolloutBuffer):
        if buf.rewards is None:
            raise ValueError("buffer has no optimized rewards yet")
        cfg = self.cfg
        adv, ret = compute_gae(buf.rewards, buf.values, buf.dones, cfg.gamma, cfg.gae_lambda)
        buf.advantages, buf.returns = adv, ret
        n = buf.T * buf.E
        obs = buf.obs[:-1].reshape(n, -1)
        acts = buf.actions.reshape(n)
        old_logp = buf.logps.reshape(n)
        old_v = buf.values[:-1].reshape(n)
        adv, ret = adv.reshape(n), ret.reshape(n)
        mb = min(cfg.minibatch_size, n)
        hist = []
        for _ in range(cfg.epochs):
            perm = self.rng.permutation(n)
            for start in range(0, n, mb):
                idx = perm[start:start + mb]
                _, grads, stats = ppo_loss_and_grads(self.net, obs[idx], acts[idx], old_logp[idx], old_v[idx],
                                                     normalize_advantages(adv[idx]), ret[idx], cfg)
                if not np.isfinite(stats["loss"]):
                    raise FloatingPointError(f"non-finite PPO loss: {stats}")
                grads, stats["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
                self.opt.step(grads)
                hist.append(stats)
        return {k: float(np.mean([h[k] for h in hist])) for k in hist[0]}
