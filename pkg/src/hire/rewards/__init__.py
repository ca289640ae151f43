from .base import IntrinsicRewardModule, Rollout
from .e3b import E3B, sherman_morrison
from .icm import ICM
from .knn import knn_sq_dists, pseudo_count, rollout_knn_log_dists
from .ngu import NGU
from .re3 import RE3

REGISTRY = {"ICM": ICM, "NGU": NGU, "RE3": RE3, "E3B": E3B}


def make_module(name, obs_dim, n_actions, num_envs, rng=None, **config):
    """Instantiate a reward module by name; `config` holds its JSON sub-object."""
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown intrinsic reward {name!r}") from None
    return cls(obs_dim, n_actions, num_envs, rng=rng, **config)


__all__ = ["ICM", "NGU", "RE3", "E3B", "IntrinsicRewardModule", "Rollout", "REGISTRY", "make_module",
           "sherman_morrison", "pseudo_count", "knn_sq_dists", "rollout_knn_log_dists"]
