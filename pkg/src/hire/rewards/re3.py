"""Particle-based entropy bonus over a fixed random embedding."""
from __future__ import annotations

import logging

import numpy as np

from ..approximators import orthogonal_init
from .base import IntrinsicRewardModule, Rollout
from .knn import rollout_knn_log_dists

logger = logging.getLogger(__name__)


class RE3(IntrinsicRewardModule):
    """bonus_t = mean over the k nearest neighbours of log(||e_t - e_i|| + 1).

    Neighbours come from the same env's embeddings within the current rollout.
    The encoder is never trained.
    """

    name = "RE3"
    trainable = False

    def __init__(self, obs_dim, n_actions, num_envs, rng=None, hidden=128, embed_dim=64, k=3, **kw):
        super().__init__(obs_dim, n_actions, num_envs, rng, **kw)
        self.encoder = orthogonal_init([obs_dim, hidden, embed_dim], self.rng, dtype=self.dtype)
        self.k = k

    def nets(self):
        return {"encoder": self.encoder}

    def compute_raw(self, rollout: Rollout):
        T, E = rollout.T, rollout.E
        emb = self.encoder(self.normalize_obs(rollout.next_obs.reshape(T * E, -1))).reshape(T, E, -1)
        k = self.k
        if T <= k:
            logger.warning("RE3: rollout length %d <= k=%d, using k=%d", T, k, T - 1)
            k = T - 1
        if k < 1:
            return np.zeros((T, E))
        return np.stack([rollout_knn_log_dists(emb[:, e], k) for e in range(E)], axis=1)
