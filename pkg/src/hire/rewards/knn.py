"""k-nearest-neighbour helpers shared by the episodic and particle-based bonuses."""
from __future__ import annotations

import numpy as np


def knn_sq_dists(query, points, k):
    """The k smallest squared Euclidean distances from `query` to `points` (ascending).

    Returns fewer than k values when there are fewer points.
    """
    if len(points) == 0:
        return np.zeros(0)
    d2 = np.sum(np.square(np.asarray(points, np.float64) - np.asarray(query, np.float64)), axis=1)
    k = min(k, len(d2))
    if k < len(d2):
        d2 = np.partition(d2, k - 1)[:k]
    return np.sort(d2)


def inverse_kernel(sq_dists, dm2, kernel_eps=1e-4):
    """K = eps / (d^2 / d_m^2 + eps)."""
    return kernel_eps / (np.asarray(sq_dists) / dm2 + kernel_eps)


def pseudo_count(embedding, memory, k=10, dm2=1.0, kernel_eps=1e-4, c=1e-3):
    """sqrt(sum of kernel values over the k nearest memory entries) + c; empty memory gives c."""
    d2 = knn_sq_dists(embedding, memory, k)
    if len(d2) == 0:
        return c
    return float(np.sqrt(np.sum(inverse_kernel(d2, dm2, kernel_eps))) + c)


def rollout_knn_log_dists(emb, k):
    """Mean of log(dist + 1) to the k nearest other rows of `emb` [T, d], for every row."""
    emb = np.asarray(emb, np.float64)
    # explicit differences rather than the Gram trick: exact zeros for duplicates
    d2 = np.sum(np.square(emb[:, None, :] - emb[None, :, :]), axis=2)
    np.fill_diagonal(d2, np.inf)
    near = np.partition(d2, k - 1, axis=1)[:, :k]
    return np.mean(np.log(np.sqrt(near) + 1.0), axis=1)


class EpisodicMemory:
    """Growable per-episode embedding store."""

    def __init__(self, dim, capacity=128):
        self.data = np.zeros((capacity, dim))
        self.n = 0

    def add(self, x):
        if self.n == len(self.data):
            self.data = np.concatenate([self.data, np.zeros_like(self.data)])
        self.data[self.n] = x
        self.n += 1

    def clear(self):
        self.n = 0

    @property
    def items(self):
        return self.data[:self.n]

    def __len__(self):
        return self.n
