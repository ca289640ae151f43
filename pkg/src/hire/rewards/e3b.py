"""Elliptical episodic bonus over an inverse-dynamics embedding."""
from __future__ import annotations

import logging

import numpy as np

from ..approximators import Adam, clip_grad_norm, orthogonal_init
from .base import IntrinsicRewardModule, Rollout, inverse_dynamics_loss

logger = logging.getLogger(__name__)


def sherman_morrison(cov_inv, phi):
    """Bonus phi^T C^-1 phi and the rank-one updated inverse (C + phi phi^T)^-1."""
    u = cov_inv @ phi
    bonus = float(phi @ u)
    return bonus, cov_inv - np.outer(u, u) / (1.0 + bonus)


class E3B(IntrinsicRewardModule):
    """bonus_t = phi_t^T C^-1 phi_t with C = lambda*I + sum of past phi phi^T in the episode.

    C^-1 is maintained directly by Sherman-Morrison updates and reset to I/lambda
    at episode boundaries (then folded with the first observation when
    `seed_episode_start` is set).
    """

    name = "E3B"

    def __init__(self, obs_dim, n_actions, num_envs, rng=None, hidden=128, embed_dim=16, ridge=0.1,
                 max_grad_norm=0.5, seed_episode_start=True, **kw):
        super().__init__(obs_dim, n_actions, num_envs, rng, **kw)
        if ridge <= 0:
            raise ValueError("ridge coefficient must be positive")
        r = self.rng
        self.encoder = orthogonal_init([obs_dim, hidden, embed_dim], r, dtype=self.dtype)
        self.inverse = orthogonal_init([2 * embed_dim, hidden, n_actions], r, dtype=self.dtype)
        self.opt = Adam(self.encoder.arrays() + self.inverse.arrays(), lr=self.lr)
        self.ridge = ridge
        self.embed_dim = embed_dim
        self.max_grad_norm = max_grad_norm
        self.cov_inv = np.stack([np.eye(embed_dim) / ridge for _ in range(num_envs)])
        self.seed_episode_start = seed_episode_start
        self.needs_start = np.full(num_envs, seed_episode_start)

    def nets(self):
        return {"encoder": self.encoder, "inverse": self.inverse}

    def on_episode_boundary(self, env):
        super().on_episode_boundary(env)
        self.cov_inv[env] = np.eye(self.embed_dim) / self.ridge
        self.needs_start[env] = self.seed_episode_start

    def observe(self, env, phi):
        """Score phi against env's ellipsoid, then fold it in."""
        bonus, new = sherman_morrison(self.cov_inv[env], phi)
        if not (np.isfinite(bonus) and bonus >= 0 and np.all(np.isfinite(new))):
            logger.warning("E3B: ellipsoid lost positive definiteness for env %d; resetting", env)
            self.cov_inv[env] = np.eye(self.embed_dim) / self.ridge
            bonus, new = sherman_morrison(self.cov_inv[env], phi)
        self.cov_inv[env] = new
        return bonus

    def compute_raw(self, rollout: Rollout):
        T, E = rollout.T, rollout.E
        phi_next = self.encoder(self.normalize_obs(rollout.next_obs.reshape(T * E, -1)))
        phi_cur = self.encoder(self.normalize_obs(rollout.obs.reshape(T * E, -1)))
        phi_next = phi_next.astype(np.float64).reshape(T, E, -1)
        phi_cur = phi_cur.astype(np.float64).reshape(T, E, -1)
        out = np.zeros((T, E))
        for e in range(E):
            for t in range(T):
                if self.needs_start[e]:
                    self.observe(e, phi_cur[t, e])
                    self.needs_start[e] = False
                out[t, e] = self.observe(e, phi_next[t, e])
                if rollout.dones[t, e]:
                    self.on_episode_boundary(e)
        return out

    def loss_and_grads(self, obs, actions, next_obs):
        loss, g, parts = inverse_dynamics_loss(self.encoder, self.inverse, obs, actions, next_obs)
        return loss, g["encoder"] + g["inverse"], parts

    def _train_batch(self, obs, actions, next_obs):
        loss, grads, _ = self.loss_and_grads(obs, actions, next_obs)
        grads, _ = clip_grad_norm(grads, self.max_grad_norm)
        self.opt.step(grads)
        return loss
