"""Episodic pseudo-counts scaled by an RND lifelong-novelty factor."""
from __future__ import annotations

import numpy as np

from ..approximators import Adam, backward, clip_grad_norm, forward, orthogonal_init
from ..normalization import RunningMeanStd
from .base import IntrinsicRewardModule, Rollout
from .knn import EpisodicMemory, inverse_kernel, knn_sq_dists

DM2_FLOOR = 1e-8


class NGU(IntrinsicRewardModule):
    """bonus = clamp(alpha, 1, C) / (sqrt(sum_k K(e_i, e)) + c).

    alpha = 1 + (err - mu) / sigma from running stats of the RND error. The
    episodic embedding is the frozen RND target's output. Each env's memory
    starts with the episode's first observation and is cleared at boundaries.
    """

    name = "NGU"

    def __init__(self, obs_dim, n_actions, num_envs, rng=None, hidden=128, embed_dim=64, k=10,
                 max_scale=5.0, c=1e-3, kernel_eps=1e-4, max_grad_norm=0.5, seed_episode_start=True, **kw):
        super().__init__(obs_dim, n_actions, num_envs, rng, **kw)
        if max_scale <= 1 or c <= 0:
            raise ValueError("NGU needs C > 1 and c > 0")
        r = self.rng
        self.target = orthogonal_init([obs_dim, hidden, embed_dim], r, dtype=self.dtype)
        self.predictor = orthogonal_init([obs_dim, hidden, hidden, embed_dim], r, dtype=self.dtype)
        self.opt = Adam(self.predictor.arrays(), lr=self.lr)
        self.k, self.max_scale, self.c, self.kernel_eps = k, max_scale, c, kernel_eps
        self.max_grad_norm = max_grad_norm
        self.err_rms = RunningMeanStd(())
        self.dm2_mean, self.dm2_count = 0.0, 0
        self.memories = [EpisodicMemory(embed_dim) for _ in range(num_envs)]
        self.seed_episode_start = seed_episode_start
        self.needs_start = np.full(num_envs, seed_episode_start)
        self.last_alpha = None

    def nets(self):
        return {"target": self.target, "predictor": self.predictor}

    def on_episode_boundary(self, env):
        super().on_episode_boundary(env)
        self.memories[env].clear()
        self.needs_start[env] = self.seed_episode_start

    def rnd_error(self, x):
        return np.mean(np.square(self.predictor(x) - self.target(x), dtype=np.float64), axis=1)

    def lifelong(self, err):
        """clamp(1 + (err - mu)/sigma, 1, C) with the current error statistics."""
        sigma = np.sqrt(self.err_rms.var + self.err_rms.epsilon)
        alpha = 1.0 + (err - self.err_rms.mean) / sigma
        return np.clip(alpha, 1.0, self.max_scale), alpha

    def episodic_count(self, emb, env):
        """Pseudo-count of `emb` against env's memory; updates the running d_m^2."""
        mem = self.memories[env]
        d2 = knn_sq_dists(emb, mem.items, self.k)
        if len(d2) == 0:
            return self.c
        self.dm2_count += len(d2)
        self.dm2_mean += (float(np.sum(d2)) - len(d2) * self.dm2_mean) / self.dm2_count
        dm2 = max(self.dm2_mean, DM2_FLOOR)
        return float(np.sqrt(np.sum(inverse_kernel(d2, dm2, self.kernel_eps))) + self.c)

    def compute_raw(self, rollout: Rollout):
        T, E = rollout.T, rollout.E
        x_next = self.normalize_obs(rollout.next_obs.reshape(T * E, -1))
        x_cur = self.normalize_obs(rollout.obs.reshape(T * E, -1))
        err = self.rnd_error(x_next)
        self.err_rms.update(err)
        scale, alpha = self.lifelong(err)
        self.last_alpha = alpha.reshape(T, E)
        scale = scale.reshape(T, E)
        emb_next = self.target(x_next).astype(np.float64).reshape(T, E, -1)
        emb_cur = self.target(x_cur).astype(np.float64).reshape(T, E, -1)
        out = np.zeros((T, E))
        for e in range(E):
            mem = self.memories[e]
            for t in range(T):
                if self.needs_start[e]:
                    mem.add(emb_cur[t, e])
                    self.needs_start[e] = False
                out[t, e] = scale[t, e] / self.episodic_count(emb_next[t, e], e)
                mem.add(emb_next[t, e])
                if rollout.dones[t, e]:
                    self.on_episode_boundary(e)
        return out

    def loss_and_grads(self, x):
        target = self.target(x)
        pred, cache = forward(self.predictor, x)
        diff = pred - target
        loss = float(np.mean(np.square(diff, dtype=np.float64)))
        return loss, backward(self.predictor, cache, 2.0 * diff / diff.size)

    def _train_batch(self, obs, actions, next_obs):
        loss, grads = self.loss_and_grads(next_obs)
        grads, _ = clip_grad_norm(grads, self.max_grad_norm)
        self.opt.step(grads)
        return loss

    def state_dict(self):
        d = super().state_dict()
        d.update(err_rms=self.err_rms.state_dict(), dm2_mean=self.dm2_mean, dm2_count=self.dm2_count)
        return d

    def load_state_dict(self, d):
        super().load_state_dict(d)
        self.err_rms.load_state_dict(d["err_rms"])
        self.dm2_mean, self.dm2_count = d["dm2_mean"], d["dm2_count"]
