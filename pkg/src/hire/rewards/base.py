from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..approximators import Mlp, backward, forward
from ..normalization import MINMAX, RMS, NormConfig, RunningMeanStd, minmax_normalize

logger = logging.getLogger(__name__)

OBS_CLIP = 5.0


@dataclass
class Rollout:
    """What a reward module sees of one PPO rollout.

    obs[t] is the observation the action at step t was taken from; next_obs[t] is
    its true successor (the terminal observation when dones[t] is set, not the
    auto-reset one).
    """

    obs: np.ndarray        # [T, E, D]
    actions: np.ndarray    # [T, E] int
    next_obs: np.ndarray   # [T, E, D]
    dones: np.ndarray      # [T, E] bool

    @property
    def T(self):
        return self.obs.shape[0]

    @property
    def E(self):
        return self.obs.shape[1]


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def cross_entropy(logits, actions):
    """Mean CE loss and its gradient wrt logits."""
    n = logits.shape[0]
    p = softmax(logits)
    rows = np.arange(n)
    loss = -np.mean(np.log(p[rows, actions] + 1e-12, dtype=np.float64))
    g = p.copy()
    g[rows, actions] -= 1
    return float(loss), g / n


def one_hot(actions, n, dtype=np.float32):
    out = np.zeros((len(actions), n), dtype)
    out[np.arange(len(actions)), actions] = 1
    return out


def add_grads(acc, grads):
    if acc is None:
        return [g.copy() for g in grads]
    for a, g in zip(acc, grads):
        a += g
    return acc


class IntrinsicRewardModule:
    """Shared plumbing: normalizers, subsampled training epochs, episodic resets.

    Subclasses implement `compute_raw` (may advance episodic state) and
    `_train_batch` (one gradient step on a minibatch of transitions).
    """

    name = "base"
    trainable = True

    def __init__(self, obs_dim, n_actions, num_envs, rng=None, norm: NormConfig | None = None,
                 update_proportion=1.0, batch_size=256, lr=1e-3, reward_stats="rewards", reward_gamma=0.99,
                 dtype=np.float32):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.num_envs = num_envs
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.norm = norm or NormConfig.for_module(self.name)
        if not 0 < update_proportion <= 1:
            raise ValueError("update_proportion must lie in (0, 1]")
        self.update_proportion = update_proportion
        self.batch_size = batch_size
        self.lr = lr
        self.dtype = dtype
        self.obs_rms = RunningMeanStd((obs_dim,))
        if reward_stats not in ("returns", "rewards"):
            raise ValueError("reward_stats must be 'returns' or 'rewards'")
        self.reward_stats = reward_stats
        self.reward_gamma = reward_gamma
        self.reward_rms = RunningMeanStd(())
        self.int_returns = np.zeros(num_envs)
        self.last_raw = None
        self.last_loss = float("nan")

    # -- normalization ------------------------------------------------------------
    def update_obs_stats(self, rollout: Rollout):
        if self.norm.obs_norm == RMS:
            self.obs_rms.update(rollout.next_obs.reshape(-1, self.obs_dim))

    def normalize_obs(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if self.norm.obs_norm == RMS and self.obs_rms.count > 0:
            std = np.sqrt(self.obs_rms.var + self.obs_rms.epsilon)
            return np.clip((x - self.obs_rms.mean) / std, -OBS_CLIP, OBS_CLIP).astype(self.dtype)
        if self.norm.obs_norm == MINMAX:
            flat = x.reshape(-1, self.obs_dim)
            return minmax_normalize(flat, axis=0).astype(self.dtype).reshape(x.shape)
        return x

    def normalize_pair(self, obs, next_obs):
        """Normalize both sides of a transition batch with shared min-max bounds."""
        if self.norm.obs_norm == MINMAX:
            both = self.normalize_obs(np.concatenate([obs, next_obs]))
            return both[:len(obs)], both[len(obs):]
        return self.normalize_obs(obs), self.normalize_obs(next_obs)

    def normalize_reward(self, raw):
        """RMS divides by a running std of the bonuses, or with reward_stats="returns" of
        each env's discounted intrinsic return (never reset at episode ends)."""
        if self.norm.reward_norm == RMS:
            if self.reward_stats == "returns":
                rets = np.empty_like(raw, dtype=np.float64)
                for t in range(len(raw)):
                    self.int_returns = self.reward_gamma * self.int_returns + raw[t]
                    rets[t] = self.int_returns
                self.reward_rms.update(rets.reshape(-1))
            else:
                self.reward_rms.update(raw.reshape(-1))
            return self.reward_rms.normalize(raw.astype(np.float64), mode="reward")
        return minmax_normalize(raw)

    # -- interface ------------------------------------------------------------------
    def compute_raw(self, rollout: Rollout) -> np.ndarray:
        raise NotImplementedError

    def compute(self, rollout: Rollout) -> np.ndarray:
        """Normalized bonus matrix [T, E]; `last_raw` keeps the raw values."""
        self.update_obs_stats(rollout)
        raw = self.compute_raw(rollout)
        self.last_raw = raw
        return self.normalize_reward(raw)

    def transitions(self, rollout: Rollout):
        n = rollout.T * rollout.E
        return (rollout.obs.reshape(n, -1), rollout.actions.reshape(n).astype(np.int64),
                rollout.next_obs.reshape(n, -1))

    def update(self, rollout: Rollout, proportion=None):
        """One pass over a `proportion` subsample, each chosen transition used once."""
        if not self.trainable:
            return
        proportion = self.update_proportion if proportion is None else proportion
        if not 0 < proportion <= 1:
            raise ValueError("proportion must lie in (0, 1]")
        obs, act, nxt = self.transitions(rollout)
        n = len(act)
        take = max(1, int(math.ceil(proportion * n)))
        idx = self.rng.permutation(n)[:take]
        obs, nxt = self.normalize_pair(obs, nxt)
        losses = []
        for start in range(0, take, self.batch_size):
            mb = idx[start:start + self.batch_size]
            loss = self._train_batch(obs[mb], act[mb], nxt[mb])
            if not np.isfinite(loss):
                raise FloatingPointError(f"{self.name}: non-finite training loss")
            losses.append(loss)
        self.last_loss = float(np.mean(losses))
        self.last_update_indices = idx

    def _train_batch(self, obs, actions, next_obs) -> float:
        raise NotImplementedError

    def on_episode_boundary(self, env: int):
        if not 0 <= env < self.num_envs:
            raise IndexError(f"env index {env} out of range")

    def nets(self) -> dict[str, Mlp]:
        return {}

    def state_dict(self):
        return {"obs_rms": self.obs_rms.state_dict(), "reward_rms": self.reward_rms.state_dict(),
                "int_returns": self.int_returns.tolist()}

    def load_state_dict(self, d):
        self.obs_rms.load_state_dict(d["obs_rms"])
        self.reward_rms.load_state_dict(d["reward_rms"])
        self.int_returns = np.asarray(d["int_returns"], np.float64)

    def clone(self):
        return copy.deepcopy(self)


# -- shared inverse-dynamics machinery (ICM and E3B) -------------------------------------

def inverse_dynamics_loss(encoder: Mlp, inverse: Mlp, obs, actions, next_obs, forward_model: Mlp | None = None,
                          n_actions=None, forward_weight=0.2):
    """Loss and gradients for encoder + inverse head (+ optional forward model).

    Without a forward model the loss is the inverse cross-entropy. With one it is
    forward_weight * MSE(f(e, a), e') + (1 - forward_weight) * CE; gradients flow
    through every path, including into the encoder from both sides of the MSE.
    Returns (loss, {"encoder": g, "inverse": g, "forward": g}, parts).
    """
    n = len(actions)
    both = np.concatenate([obs, next_obs])
    emb, enc_cache = forward(encoder, both)
    e, e2 = emb[:n], emb[n:]
    d = e.shape[1]
    logits, inv_cache = forward(inverse, np.concatenate([e, e2], axis=1))
    ce, g_logits = cross_entropy(logits, actions)
    inv_w = 1.0 if forward_model is None else 1.0 - forward_weight
    g_inv, g_pair = backward(inverse, inv_cache, inv_w * g_logits, need_input_grad=True)
    g_emb = np.concatenate([g_pair[:, :d], g_pair[:, d:]])
    grads = {"inverse": g_inv}
    parts = {"inverse": ce}
    loss = inv_w * ce
    if forward_model is not None:
        a1h = one_hot(actions, n_actions, e.dtype)
        pred, fwd_cache = forward(forward_model, np.concatenate([e, a1h], axis=1))
        diff = pred - e2
        mse = float(np.mean(np.square(diff, dtype=np.float64)))
        g_pred = (forward_weight * 2.0 / diff.size) * diff
        g_fwd, g_in = backward(forward_model, fwd_cache, g_pred, need_input_grad=True)
        g_emb[:n] += g_in[:, :d]
        g_emb[n:] -= g_pred
        grads["forward"] = g_fwd
        parts["forward"] = mse
        loss += forward_weight * mse
    grads["encoder"] = backward(encoder, enc_cache, g_emb)
    return float(loss), grads, parts
