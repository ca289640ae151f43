"""Observation / reward normalizers used by the intrinsic reward modules."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

EPS = 1e-8

RMS, MINMAX, NONE = "rms", "minmax", "none"

# Per-module defaults, one entry per reward module.
DEFAULT_NORM = {
    "ICM": {"obs_norm": MINMAX, "reward_norm": RMS},
    "NGU": {"obs_norm": RMS, "reward_norm": RMS},
    "RE3": {"obs_norm": RMS, "reward_norm": MINMAX},
    "E3B": {"obs_norm": RMS, "reward_norm": RMS},
}


@dataclass
class NormConfig:
    obs_norm: str = RMS
    reward_norm: str = RMS

    def __post_init__(self):
        if self.obs_norm not in (RMS, MINMAX, NONE):
            raise ValueError(f"bad obs_norm {self.obs_norm!r}")
        if self.reward_norm not in (RMS, MINMAX):
            raise ValueError(f"bad reward_norm {self.reward_norm!r}")

    @classmethod
    def for_module(cls, name: str, **overrides) -> NormConfig:
        cfg = dict(DEFAULT_NORM[name])
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**cfg)


class RunningMeanStd:
    """Running mean/variance merged batch-by-batch (Chan et al. parallel update).

    Moments are kept in float64 regardless of input dtype.
    """

    def __init__(self, shape=(), epsilon=EPS):
        self.mean = np.zeros(shape, np.float64)
        self.var = np.zeros(shape, np.float64)
        self.count = 0.0
        self.epsilon = epsilon

    @property
    def shape(self):
        return self.mean.shape

    def update(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        nd = self.mean.ndim
        # leading axes are all sample axes (e.g. [T, E, dim])
        if batch.ndim < nd + 1 or batch.shape[batch.ndim - nd:] != self.mean.shape:
            raise ValueError(f"batch width {batch.shape} does not match {self.mean.shape}")
        batch = batch.reshape((-1,) + self.mean.shape)
        if batch.shape[0] == 0:
            raise ValueError("empty batch")
        self.update_from_moments(batch.mean(axis=0), batch.var(axis=0), batch.shape[0])
        return self

    def update_from_moments(self, batch_mean, batch_var, batch_count):
        if self.count == 0:
            self.mean = np.array(batch_mean, np.float64)
            self.var = np.array(batch_var, np.float64)
            self.count = float(batch_count)
            return
        delta = batch_mean - self.mean
        tot = self.count + batch_count
        self.mean = self.mean + delta * batch_count / tot
        m2 = self.var * self.count + batch_var * batch_count + delta ** 2 * self.count * batch_count / tot
        self.var = np.maximum(m2 / tot, 0.0)
        self.count = tot

    def normalize(self, x, mode="obs", clip=None):
        """(x - mean)/std for observations, x/std for rewards (sign and zeros preserved)."""
        if self.count == 0:
            logger.warning("normalizing with an empty RunningMeanStd; input returned unchanged")
            return x
        x = np.asarray(x)
        std = np.sqrt(self.var + self.epsilon)
        if mode == "obs":
            out = (x - self.mean) / std
        elif mode == "reward":
            out = x / std
        else:
            raise ValueError(f"unknown mode {mode!r}")
        if clip is not None:
            out = np.clip(out, -clip, clip)
        return out.astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64, copy=False)

    def state_dict(self):
        return {"count": self.count, "mean": self.mean.tolist(), "var": self.var.tolist()}

    def load_state_dict(self, d):
        self.count = float(d["count"])
        self.mean = np.asarray(d["mean"], np.float64).reshape(self.mean.shape)
        self.var = np.asarray(d["var"], np.float64).reshape(self.var.shape)


def rms_update(state: RunningMeanStd, batch) -> RunningMeanStd:
    return state.update(batch)


def rms_normalize(state: RunningMeanStd, x, mode="obs"):
    return state.normalize(x, mode)


def minmax_normalize(batch, axis=None, eps=EPS):
    """(x - min)/(max - min + eps) over the batch; a constant batch maps to zeros."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size == 0:
        raise ValueError("empty batch")
    lo = batch.min(axis=axis, keepdims=axis is not None)
    hi = batch.max(axis=axis, keepdims=axis is not None)
    return (batch - lo) / (hi - lo + eps)
