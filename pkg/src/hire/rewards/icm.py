"""Curiosity from forward-model prediction error in a learned embedding space."""
from __future__ import annotations

import numpy as np

from ..approximators import Adam, clip_grad_norm, orthogonal_init
from .base import IntrinsicRewardModule, Rollout, inverse_dynamics_loss, one_hot


class ICM(IntrinsicRewardModule):
    name = "ICM"

    def __init__(self, obs_dim, n_actions, num_envs, rng=None, hidden=128, embed_dim=64,
                 forward_weight=0.2, max_grad_norm=0.5, **kw):
        super().__init__(obs_dim, n_actions, num_envs, rng, **kw)
        r = self.rng
        self.encoder = orthogonal_init([obs_dim, hidden, embed_dim], r, dtype=self.dtype)
        self.forward_model = orthogonal_init([embed_dim + n_actions, hidden, embed_dim], r, dtype=self.dtype)
        self.inverse = orthogonal_init([2 * embed_dim, hidden, n_actions], r, dtype=self.dtype)
        self.forward_weight = forward_weight
        self.max_grad_norm = max_grad_norm
        self.opt = Adam(self._arrays(), lr=self.lr)
        self.last_forward_loss = float("nan")

    def _arrays(self):
        return self.encoder.arrays() + self.forward_model.arrays() + self.inverse.arrays()

    def nets(self):
        return {"encoder": self.encoder, "forward": self.forward_model, "inverse": self.inverse}

    def predict(self, obs, actions, next_obs):
        """Predicted and actual next embeddings for a flat batch of transitions."""
        e = self.encoder(obs)
        e2 = self.encoder(next_obs)
        pred = self.forward_model(np.concatenate([e, one_hot(actions, self.n_actions, e.dtype)], axis=1))
        return pred, e2

    def compute_raw(self, rollout: Rollout):
        obs, act, nxt = self.transitions(rollout)
        obs, nxt = self.normalize_pair(obs, nxt)
        pred, e2 = self.predict(obs, act, nxt)
        err = np.sum(np.square(pred - e2, dtype=np.float64), axis=1)
        return err.reshape(rollout.T, rollout.E)

    def loss_and_grads(self, obs, actions, next_obs):
        loss, g, parts = inverse_dynamics_loss(self.encoder, self.inverse, obs, actions, next_obs,
                                               self.forward_model, self.n_actions, self.forward_weight)
        return loss, g["encoder"] + g["forward"] + g["inverse"], parts

    def _train_batch(self, obs, actions, next_obs):
        loss, grads, parts = self.loss_and_grads(obs, actions, next_obs)
        grads, _ = clip_grad_norm(grads, self.max_grad_norm)
        self.opt.step(grads)
        self.last_forward_loss = parts["forward"]
        return loss
