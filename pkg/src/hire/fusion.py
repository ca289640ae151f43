"""Combining several exploration bonuses into one: summation, product, cycle and maximum.

A fused bonus I_t is mixed into the task reward as R_t = E_t + beta_t * I_t with
beta_t = beta0 * (1 - kappa)**t.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

import numpy as np

STRATEGIES = {"S": "Summation", "P": "Product", "C": "Cycle", "M": "Maximum"}
STRATEGY_CODES = {v: k for k, v in STRATEGIES.items()}

# canonical member order; labels list members in this order
REWARD_NAMES = ("NGU", "E3B", "RE3", "ICM")
ABBREV = {"ICM": "I", "NGU": "N", "RE3": "R", "E3B": "E"}
UNABBREV = {v: k for k, v in ABBREV.items()}

EXTRINSIC = "Extrinsic"


def _code(strategy: str) -> str:
    if strategy in STRATEGIES:
        return strategy
    if strategy in STRATEGY_CODES:
        return STRATEGY_CODES[strategy]
    raise ValueError(f"unknown fusion strategy {strategy!r}")


def canonical_order(names):
    rank = {n: i for i, n in enumerate(REWARD_NAMES)}
    return sorted(names, key=lambda n: (rank.get(n, len(rank)), n))


@dataclass
class FusionSpec:
    strategy: str
    members: list[str]
    weights: list[float] | None = None
    beta0: float = 0.25
    kappa: float = 0.0

    def __post_init__(self):
        self.strategy = _code(self.strategy)
        self.members = list(self.members)
        if not self.members:
            raise ValueError("a fusion needs at least one member")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"duplicate members in {self.members}")
        if self.weights is None:
            self.weights = [1.0] * len(self.members)
        if len(self.weights) != len(self.members):
            raise ValueError("weights must have one entry per member")
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if not 0 <= self.kappa < 1:
            raise ValueError("kappa must lie in [0, 1)")

    @property
    def n(self) -> int:
        return len(self.members)


def fuse(spec: FusionSpec, bonuses, steps=None) -> np.ndarray:
    """Combine n same-shaped bonus matrices elementwise.

    `steps` gives the time index t of every entry (broadcastable to the bonus
    shape); Cycle selects member t mod n. Summation uses `spec.weights`.
    """
    if len(bonuses) == 0:
        raise ValueError("no bonuses to fuse")
    if len(bonuses) != spec.n:
        raise ValueError(f"expected {spec.n} bonus matrices, got {len(bonuses)}")
    stack = np.stack([np.asarray(b, dtype=np.float64) for b in bonuses])
    if any(np.shape(b) != stack.shape[1:] for b in bonuses):
        raise ValueError("bonus matrices must share a shape")
    s = spec.strategy
    if s == "S":
        w = np.asarray(spec.weights, np.float64).reshape((-1,) + (1,) * (stack.ndim - 1))
        return (w * stack).sum(axis=0)
    if s == "P":
        return np.prod(stack, axis=0)
    if s == "M":
        return stack.max(axis=0)
    if steps is None:
        raise ValueError("Cycle fusion needs per-entry step indices")
    idx = np.broadcast_to(np.asarray(steps, np.int64) % spec.n, stack.shape[1:])
    return np.take_along_axis(stack, idx[None], axis=0)[0]


def selection_weights(spec: FusionSpec, bonuses, steps=None) -> np.ndarray:
    """One-hot weights [n, ...] that reproduce Cycle/Maximum as a weighted sum."""
    stack = np.stack([np.asarray(b, dtype=np.float64) for b in bonuses])
    if spec.strategy == "C":
        idx = np.broadcast_to(np.asarray(steps, np.int64) % spec.n, stack.shape[1:])
    elif spec.strategy == "M":
        idx = stack.argmax(axis=0)
    else:
        raise ValueError("only Cycle and Maximum select a single member")
    return (np.arange(spec.n).reshape((-1,) + (1,) * idx.ndim) == idx[None]).astype(np.float64)


_BETA_TABLES: dict[tuple[float, float], np.ndarray] = {}


def _beta_table(beta0, kappa, t_max):
    # beta_t is defined by the recursion itself (a sequential cumulative product),
    # so beta(t + 1) == (1 - kappa) * beta(t) holds bit for bit
    key = (float(beta0), float(kappa))
    table = _BETA_TABLES.get(key)
    if table is None:
        table = np.array([float(beta0)])
    if len(table) <= t_max:
        grow = max(t_max + 1 - len(table), len(table))
        ext = np.cumprod(np.concatenate([table[-1:], np.full(grow, 1.0 - kappa)]))[1:]
        table = np.concatenate([table, ext])
    _BETA_TABLES[key] = table
    return table


def beta(beta0: float, kappa: float, t) -> float | np.ndarray:
    """beta_0 * (1 - kappa)^t for integer t >= 0 (scalar or array)."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    if not np.all(t_arr == np.floor(t_arr)):
        raise ValueError("t must be an integer step count")
    if kappa == 0:
        out = np.full(t_arr.shape, float(beta0))
    else:
        idx = t_arr.astype(np.int64)
        out = _beta_table(beta0, kappa, int(idx.max()) if idx.size else 0)[idx]
    return float(out) if out.ndim == 0 else out


def combine(extrinsic, fused, beta_t) -> np.ndarray:
    """R = E + beta_t * I; beta_t is a scalar, a per-step vector [T] or a full [T, E] array."""
    extrinsic = np.asarray(extrinsic, np.float64)
    fused = np.asarray(fused, np.float64)
    if extrinsic.shape != fused.shape:
        raise ValueError(f"shape mismatch {extrinsic.shape} vs {fused.shape}")
    b = np.asarray(beta_t, np.float64)
    if b.ndim == 1 and fused.ndim == 2:
        b = b[:, None]
    return extrinsic + b * fused


# -- candidates ------------------------------------------------------------------

@dataclass
class CandidateSpec:
    """A reward candidate: extrinsic only, one module, or a fusion of several."""

    strategy: str | None            # None for extrinsic-only and single-module candidates
    members: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.members = canonical_order(self.members)
        if self.strategy is not None:
            self.strategy = _code(self.strategy)
            if len(self.members) < 2:
                raise ValueError("a fused candidate needs at least two members")
        elif len(self.members) > 1:
            raise ValueError("several members need a fusion strategy")

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def is_extrinsic(self) -> bool:
        return not self.members

    @property
    def label(self) -> str:
        if self.is_extrinsic:
            return EXTRINSIC
        if self.strategy is None:
            return self.members[0]
        return f"{self.strategy}({', '.join(self.members)})"

    @property
    def short_label(self) -> str:
        if self.is_extrinsic:
            return EXTRINSIC
        inner = ", ".join(ABBREV.get(m, m) for m in self.members)
        return inner if self.strategy is None else f"{self.strategy}({inner})"

    @property
    def type_tag(self) -> str:
        """HIRE-{Type}{n}; singles are HIRE-1 and the extrinsic baseline HIRE-0."""
        if self.strategy is None:
            return f"HIRE-{self.n}"
        return f"HIRE-{self.strategy}{self.n}"

    @property
    def group(self) -> str:
        """Strategy group used in top-k tables."""
        if self.is_extrinsic:
            return EXTRINSIC
        if self.strategy is None:
            return "Baseline"
        return STRATEGIES[self.strategy]

    def fusion(self, beta0=0.25, kappa=0.0, weights=None) -> FusionSpec | None:
        if self.is_extrinsic:
            return None
        # a single module is fused as a one-member sum
        return FusionSpec(self.strategy or "S", self.members, weights, beta0, kappa)

    def __str__(self):
        return self.label


_LABEL_RE = re.compile(r"^\s*(?:HIRE-[SPCM]\d\s*:\s*)?([SPCM])\s*\((.*)\)\s*$")


def _member(tok: str) -> str:
    tok = tok.strip().upper()
    if tok in ABBREV:
        return tok
    if tok in UNABBREV:
        return UNABBREV[tok]
    raise ValueError(f"unknown reward module {tok!r}")


def parse_candidate(label: str) -> CandidateSpec:
    """Inverse of CandidateSpec.label; also accepts I/N/R/E abbreviations."""
    text = label.strip()
    if text.lower() in ("extrinsic", "hire-0", "hire-s0", "none"):
        return CandidateSpec(None, [])
    m = _LABEL_RE.match(text)
    if m:
        return CandidateSpec(m.group(1), [_member(t) for t in m.group(2).split(",")])
    return CandidateSpec(None, [_member(text)])


def enumerate_candidates(reward_names=REWARD_NAMES, strategies=("S", "P", "C", "M"),
                         include_singles=False, include_extrinsic=False) -> list[CandidateSpec]:
    """All subsets of size >= 2 crossed with every strategy, ordered by size then lexicographically.

    Optionally prefixed by the extrinsic baseline and the single modules.
    """
    names = canonical_order(dict.fromkeys(_member(n) for n in reward_names))
    if not names:
        raise ValueError("need at least one reward name")
    out = []
    if include_extrinsic:
        out.append(CandidateSpec(None, []))
    if include_singles:
        out += [CandidateSpec(None, [n]) for n in names]
    hybrids = [CandidateSpec(s, list(c)) for size in range(2, len(names) + 1)
               for s in dict.fromkeys(_code(s) for s in strategies)
               for c in itertools.combinations(names, size)]
    return out + sorted(hybrids, key=lambda c: (c.n, c.label))
