"""Aggregate statistics over a task x candidate x seed score tensor.

IQM with stratified-bootstrap percentile intervals, performance CDFs grouped
by the number of fused rewards, cross-task rankings and top-k strategy shares.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fusion import parse_candidate

logger = logging.getLogger(__name__)

GROUP_ORDER = ["Extrinsic", "Baseline", "Summation", "Product", "Maximum", "Cycle"]


@dataclass
class RunMatrix:
    """scores[task, candidate, seed]; NaN marks a missing run and is never imputed."""

    tasks: list[str]
    candidates: list[str]
    seeds: list[int]
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, np.float64)
        if self.scores.shape != (len(self.tasks), len(self.candidates), len(self.seeds)):
            raise ValueError("scores shape does not match the axes")
        self._specs = [parse_candidate(c) for c in self.candidates]

    @classmethod
    def from_records(cls, records):
        """records: iterable of (task, candidate, seed, score); score None = missing."""
        records = list(records)
        tasks = sorted({r[0] for r in records})
        cands = sorted({parse_candidate(r[1]).label for r in records})
        seeds = sorted({r[2] for r in records})
        scores = np.full((len(tasks), len(cands), len(seeds)), np.nan)
        seen = set()
        for task, cand, seed, score in records:
            key = (task, parse_candidate(cand).label, seed)
            if key in seen:
                raise ValueError(f"duplicate run {key}")
            seen.add(key)
            if score is not None:
                scores[tasks.index(task), cands.index(key[1]), seeds.index(seed)] = score
        return cls(tasks, cands, seeds, scores)

    def group(self, i) -> str:
        return self._specs[i].group

    def n_rewards(self, i) -> int:
        return self._specs[i].n

    def short(self, i) -> str:
        return self._specs[i].short_label

    def index(self, candidate) -> int:
        label = parse_candidate(candidate).label
        if label not in self.candidates:
            raise KeyError(f"candidate {candidate!r} not in matrix")
        return self.candidates.index(label)

    def normalized(self) -> RunMatrix:
        """Per-task min-max over every candidate and seed on that task."""
        s = self.scores
        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN tasks stay NaN
            lo = np.nanmin(s, axis=(1, 2), keepdims=True)
            hi = np.nanmax(s, axis=(1, 2), keepdims=True)
        span = np.where(hi > lo, hi - lo, 1.0)
        return RunMatrix(self.tasks, self.candidates, self.seeds, (s - lo) / span)

    def task_means(self) -> np.ndarray:
        """[task, candidate] mean over available seeds."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.scores, axis=2)


def iqm(scores) -> float:
    """Mean after dropping floor(N/4) values from each tail of the sorted scores."""
    x = np.sort(np.asarray(scores, np.float64).ravel())
    if x.size == 0:
        raise ValueError("iqm of an empty list")
    k = x.size // 4
    return float(np.mean(x[k:x.size - k]))


def _iqm_rows(x):
    x = np.sort(x, axis=1)
    k = x.shape[1] // 4
    return x[:, k:x.shape[1] - k].mean(axis=1)


def _candidate_indices(matrix, candidate):
    if isinstance(candidate, (list, tuple)):
        return [matrix.index(c) for c in candidate]
    return [matrix.index(candidate)]


def pooled_scores(matrix: RunMatrix, candidate):
    idx = _candidate_indices(matrix, candidate)
    per_task = []
    for t in range(len(matrix.tasks)):
        vals = matrix.scores[t, idx].ravel()
        per_task.append(vals[~np.isnan(vals)])
    return per_task


def stratified_bootstrap_ci(matrix: RunMatrix, candidate, n_resamples=2000, level=0.95, rng=0):
    """Percentile interval of the aggregate IQM, resampling runs with replacement within each task.

    `candidate` may be a list; its runs are pooled inside each task stratum.
    Returns (point_estimate, lo, hi).
    """
    if n_resamples < 1000:
        raise ValueError("n_resamples must be >= 1000")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    strata = [s for s in pooled_scores(matrix, candidate) if len(s)]
    if not strata:
        raise ValueError(f"no runs for {candidate!r}")
    point = iqm(np.concatenate(strata))
    draws = [s[rng.integers(0, len(s), size=(n_resamples, len(s)))] for s in strata]
    boot = _iqm_rows(np.concatenate(draws, axis=1))
    alpha = (1 - level) / 2
    lo, hi = np.percentile(boot, [100 * alpha, 100 * (1 - alpha)])
    return point, float(lo), float(hi)


def performance_cdf(matrix: RunMatrix, taus=None, groups=None, normalize=True):
    """Fraction of runs with normalized score >= tau, per number of fused rewards.

    Returns (taus, {n_rewards: curve}).
    """
    taus = np.linspace(0, 1, 101) if taus is None else np.asarray(taus, np.float64)
    m = matrix.normalized() if normalize else matrix
    by_n = {}
    for i in range(len(m.candidates)):
        vals = m.scores[:, i].ravel()
        by_n.setdefault(m.n_rewards(i), []).append(vals[~np.isnan(vals)])
    groups = sorted(by_n) if groups is None else list(groups)
    curves = {}
    for g in groups:
        if g not in by_n or sum(len(v) for v in by_n[g]) == 0:
            raise ValueError(f"no runs in group HIRE-{g}")
        vals = np.concatenate(by_n[g])
        curves[g] = (vals[None, :] >= taus[:, None]).mean(axis=1)
    return taus, curves


def rank_candidates(matrix: RunMatrix, normalize=True):
    """Mean and standard error across tasks of the per-task (normalized) score, best first.

    Ties are broken by label.
    """
    m = matrix.normalized() if normalize else matrix
    tm = m.task_means()
    out = []
    for i, label in enumerate(m.candidates):
        v = tm[:, i]
        v = v[~np.isnan(v)]
        mean = float(np.mean(v)) if len(v) else float("nan")
        se = float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append({"label": label, "short": m.short(i), "group": m.group(i), "n_rewards": m.n_rewards(i),
                    "mean": mean, "se": se, "n_tasks": int(len(v))})
    out.sort(key=lambda r: (-r["mean"] if not np.isnan(r["mean"]) else np.inf, r["label"]))
    for rank, r in enumerate(out, 1):
        r["rank"] = rank
    return out


def _task_ranking(matrix: RunMatrix, t):
    tm = matrix.task_means()[t]
    order = [i for i in range(len(matrix.candidates)) if not np.isnan(tm[i])]
    return sorted(order, key=lambda i: (-tm[i], matrix.candidates[i]))


def top_k_proportions(matrix: RunMatrix, ks=(1, 5, 10, 20)):
    """Share of each strategy group among every task's top-k candidates, pooled over tasks."""
    table = {}
    for k in ks:
        counts = dict.fromkeys(GROUP_ORDER, 0)
        total = 0
        for t in range(len(matrix.tasks)):
            ranking = _task_ranking(matrix, t)
            if k > len(ranking):
                logger.warning("top-%d exceeds %d candidates on %s; clamped", k, len(ranking), matrix.tasks[t])
            for i in ranking[:k]:
                counts[matrix.group(i)] += 1
                total += 1
        table[k] = {g: (c / total if total else 0.0) for g, c in counts.items()}
    return table


# -- files ----------------------------------------------------------------------------

def load_run_matrix(runs_dir) -> RunMatrix:
    """Collect every summary.json under `runs_dir`. Failed runs stay as missing cells."""
    records = []
    for path in sorted(Path(runs_dir).rglob("summary.json")):
        s = json.loads(path.read_text())
        for r in s["runs"]:
            score = r.get("final_score") if r.get("status") == "ok" else None
            records.append((s["task"], s["candidate"], r["seed"], score))
    if not records:
        raise FileNotFoundError(f"no summary.json under {runs_dir}")
    return RunMatrix.from_records(records)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def analyze(runs_dir, out_dir, n_resamples=2000, level=0.95, ks=(1, 5, 10, 20), seed=0):
    """Write ranking.csv, iqm_ci.csv, cdf.csv, topk.csv and report.txt. Returns the report text."""
    matrix = load_run_matrix(runs_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    norm = matrix.normalized()

    ranking = rank_candidates(matrix)
    _write_csv(out / "ranking.csv", ["rank", "label", "short", "group", "n_rewards", "mean", "se", "n_tasks"],
               [[r[k] for k in ("rank", "label", "short", "group", "n_rewards", "mean", "se", "n_tasks")]
                for r in ranking])

    ci_rows = []
    rng = np.random.default_rng(seed)
    groups = {}
    for i, c in enumerate(norm.candidates):
        groups.setdefault(norm.group(i), []).append(c)
    scored = {c for i, c in enumerate(norm.candidates) if np.isfinite(norm.scores[:, i]).any()}
    for c in sorted(set(norm.candidates) - scored):
        logger.warning("%s has no finished runs with a score; left out of the intervals", c)
    for g in GROUP_ORDER:
        members = [c for c in groups.get(g, []) if c in scored]
        if members:
            ci_rows.append(["group", g, *stratified_bootstrap_ci(norm, members, n_resamples, level, rng)])
    for c in norm.candidates:
        if c in scored:
            ci_rows.append(["candidate", c, *stratified_bootstrap_ci(norm, c, n_resamples, level, rng)])
    _write_csv(out / "iqm_ci.csv", ["kind", "name", "iqm", "lo", "hi"], ci_rows)

    if not scored:
        raise ValueError(f"no scored runs under {runs_dir}")
    taus, curves = performance_cdf(matrix, groups=sorted({norm.n_rewards(norm.index(c)) for c in scored}))
    keys = sorted(curves)
    _write_csv(out / "cdf.csv", ["tau"] + [f"HIRE-{n}" for n in keys],
               [[f"{tau:.2f}"] + [float(curves[n][j]) for n in keys] for j, tau in enumerate(taus)])

    topk = top_k_proportions(matrix, ks)
    _write_csv(out / "topk.csv", ["k"] + GROUP_ORDER, [[k] + [topk[k][g] for g in GROUP_ORDER] for k in ks])

    lines = [f"tasks: {', '.join(matrix.tasks)}", f"candidates: {len(matrix.candidates)}  seeds: {len(matrix.seeds)}",
             "scores: per-task min-max normalized final scores", "", "Aggregated ranking (mean +- s.e. across tasks)"]
    for r in ranking:
        lines.append(f"{r['rank']:>3}  {r['short']:<16} {r['mean']:.3f} +- {r['se']:.3f}")
    lines += ["", f"IQM with {int(level * 100)}% stratified bootstrap CI"]
    for row in ci_rows:
        if row[0] == "group":
            lines.append(f"  {row[1]:<10} {row[2]:.3f}  [{row[3]:.3f}, {row[4]:.3f}]")
    lines += ["", "Strategy " + " ".join(f"{g:>10}" for g in GROUP_ORDER)]
    for k in ks:
        lines.append(f"Top {k:<4}  " + " ".join(f"{100 * topk[k][g]:>9.2f}%" for g in GROUP_ORDER))
    report = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(report)
    return report
