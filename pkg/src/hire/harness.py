"""Experiment orchestration: configs, seed sweeps, phased schedules, metrics files, FPS."""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import approximators
from .fusion import CandidateSpec, FusionSpec, beta, combine, fuse, parse_candidate
from .gridworlds import GridSpec, VectorEnv, render_ascii
from .ppo import PPOAgent, PpoConfig
from .rewards import make_module
from .normalization import NormConfig

logger = logging.getLogger(__name__)

METRICS_VERSION = "hire-metrics v1"
SCORE_WINDOW = 0.1
PRETRAIN, FINETUNE, MIXED = "pretrain", "finetune", "mixed"

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "task": {"type": "string"},
        "env": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["MultiRoom", "KeyCorridor", "DynamicObstacles"]},
                "n_rooms": {"type": "integer", "minimum": 1},
                "room_size": {"type": "integer", "minimum": 4},
                "grid_w": {"type": "integer", "minimum": 0},
                "grid_h": {"type": "integer", "minimum": 0},
                "max_steps": {"type": "integer", "minimum": 0},
                "n_obstacles": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
            },
        },
        "candidate": {"type": "string"},
        "candidates": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "beta0": {"type": "number", "exclusiveMinimum": 0},
        "kappa": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "weights": {"type": ["array", "null"], "items": {"type": "number"}},
        "ppo": {"type": "object"},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "phases": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "properties": {
                "pretrain_steps": {"type": "integer", "minimum": 0},
                "finetune_steps": {"type": "integer", "minimum": 0},
            },
            "required": ["pretrain_steps", "finetune_steps"],
        },
        "modules": {"type": "object", "additionalProperties": {"type": "object"}},
        "out_dir": {"type": "string"},
        "dump_bonuses": {"type": "boolean"},
        "render_ascii": {"type": "boolean"},
        "checkpoint_phases": {"type": "boolean"},
    },
}


@dataclass
class PhaseSchedule:
    pretrain_steps: int = 0
    finetune_steps: int = 0

    def __post_init__(self):
        if self.pretrain_steps < 0 or self.finetune_steps < 0:
            raise ValueError("phase steps must be non-negative")
        if self.pretrain_steps == 0 and self.finetune_steps == 0:
            raise ValueError("at least one phase must be non-empty")

    def phases(self):
        return [(p, s) for p, s in ((PRETRAIN, self.pretrain_steps), (FINETUNE, self.finetune_steps)) if s > 0]


@dataclass
class ExperimentConfig:
    env: GridSpec = field(default_factory=GridSpec)
    candidate: str = "C(NGU, RE3)"
    candidates: list[str] | None = None
    beta0: float = 0.25
    kappa: float = 0.0
    weights: list[float] | None = None
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    phases: PhaseSchedule | None = None
    modules: dict = field(default_factory=dict)
    out_dir: str = ""
    name: str = "experiment"
    task: str = ""
    dump_bonuses: bool = False
    render_ascii: bool = False
    checkpoint_phases: bool = True

    def __post_init__(self):
        if not self.task:
            e = self.env
            self.task = {"MultiRoom": f"MultiRoom-N{e.n_rooms}-S{e.room_size}",
                         "KeyCorridor": f"KeyCorridorS{e.room_size}R{e.n_rooms}",
                         "DynamicObstacles": f"Dynamic-Obstacles-{e.grid_w}x{e.grid_h}"}[e.family]
        if not self.out_dir:
            self.out_dir = os.environ.get("HIRE_OUT_DIR", "runs")
        parse_candidate(self.candidate)
        for c in self.candidates or []:
            parse_candidate(c)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        jsonschema.validate(d, CONFIG_SCHEMA)
        d = copy.deepcopy(d)
        if "env" in d:
            d["env"] = GridSpec.from_dict(d["env"])
        if "ppo" in d:
            d["ppo"] = PpoConfig(**d["ppo"])
        if d.get("phases") is not None:
            d["phases"] = PhaseSchedule(**d["phases"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = {
            "name": self.name, "task": self.task, "env": self.env.to_dict(), "candidate": self.candidate,
            "beta0": self.beta0, "kappa": self.kappa, "weights": self.weights, "ppo": self.ppo.to_dict(),
            "seeds": list(self.seeds), "modules": self.modules, "out_dir": self.out_dir,
            "dump_bonuses": self.dump_bonuses, "render_ascii": self.render_ascii,
            "checkpoint_phases": self.checkpoint_phases,
            "phases": None if self.phases is None else {"pretrain_steps": self.phases.pretrain_steps,
                                                        "finetune_steps": self.phases.finetune_steps},
        }
        if self.candidates:
            d["candidates"] = list(self.candidates)
        return d

    def with_(self, **kw) -> ExperimentConfig:
        d = self.to_dict()
        d.update(kw)
        return ExperimentConfig.from_dict(d)


def slug(label: str) -> str:
    c = parse_candidate(label)
    if c.is_extrinsic:
        return "extrinsic"
    if c.strategy is None:
        return c.members[0]
    return f"{c.strategy}_" + "-".join(c.members)


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# -- a single training run ----------------------------------------------------------

class Run:
    """One (candidate, seed) training run. The PPO agent is candidate-agnostic:
    rewards are built here and handed to it through `buffer.set_rewards`."""

    def __init__(self, cfg: ExperimentConfig, seed: int, candidate: str | None = None):
        self.cfg = cfg
        self.seed = seed
        self.candidate: CandidateSpec = parse_candidate(candidate or cfg.candidate)
        env_ss, agent_ss, mod_ss = np.random.SeedSequence(seed).spawn(3)
        self.env = VectorEnv(cfg.env, cfg.ppo.num_envs, seed=env_ss)
        self.agent = PPOAgent(self.env.obs_dim, self.env.n_actions, cfg.ppo, np.random.default_rng(agent_ss))
        self.fusion: FusionSpec | None = self.candidate.fusion(cfg.beta0, cfg.kappa, cfg.weights)
        self.modules = {}
        for name, ss in zip(self.candidate.members, mod_ss.spawn(max(1, self.candidate.n))):
            mcfg = dict(cfg.modules.get(name, {}))
            norm = mcfg.pop("norm", None)
            if norm is not None:
                mcfg["norm"] = NormConfig.for_module(name, **norm)
            self.modules[name] = make_module(name, self.env.obs_dim, self.env.n_actions, cfg.ppo.num_envs,
                                             rng=np.random.default_rng(ss), **mcfg)
        self.obs = self.env.reset()
        self.iteration = 0
        self.frames = 0

    @property
    def intrinsic(self) -> bool:
        return self.fusion is not None

    def columns(self):
        cols = ["candidate", "seed", "phase", "iteration", "global_step", "episodes", "episodic_return",
                "success_rate", "beta", "reward_extrinsic_mean", "reward_beta_intrinsic_mean",
                "reward_optimized_mean"]
        if self.intrinsic:
            cols.append("fused_intrinsic_mean")
            for m in self.modules:
                cols += [f"{m}_raw_mean", f"{m}_norm_mean", f"{m}_loss"]
        return cols + ["loss", "pg_loss", "v_loss", "entropy", "approx_kl", "clipfrac", "grad_norm"]

    def iterate(self, phase=MIXED):
        """Collect one rollout, build the optimized reward for `phase`, update everything."""
        buf, self.obs, episodes = self.agent.collect(self.env, self.obs)
        self.iteration += 1
        self.frames += buf.T * buf.E
        row = {"candidate": self.candidate.label, "seed": self.seed, "phase": phase,
               "iteration": self.iteration, "global_step": self.frames, "episodes": len(episodes),
               "episodic_return": float(np.mean([e["return"] for e in episodes])) if episodes else None,
               "success_rate": float(np.mean([e["success"] for e in episodes])) if episodes else None}
        fused = np.zeros((buf.T, buf.E))
        beta_t = np.zeros((buf.T, buf.E))
        bonuses = {}
        if self.intrinsic and phase != FINETUNE:
            rollout = buf.rollout()
            for name, mod in self.modules.items():
                bonuses[name] = mod.compute(rollout)
            fused = fuse(self.fusion, [bonuses[m] for m in self.fusion.members], steps=buf.steps)
            beta_t = beta(self.fusion.beta0, self.fusion.kappa, buf.steps.astype(np.float64))
            for mod in self.modules.values():
                mod.update(rollout)
        extrinsic = np.zeros_like(buf.ext_rewards) if phase == PRETRAIN else buf.ext_rewards
        optimized = combine(extrinsic, fused, beta_t)
        buf.set_rewards(optimized)
        stats = self.agent.learn(buf)
        row.update(beta=float(beta_t[-1].mean()), reward_extrinsic_mean=float(buf.ext_rewards.mean()),
                   reward_beta_intrinsic_mean=float((beta_t * fused).mean()),
                   reward_optimized_mean=float(optimized.mean()))
        if self.intrinsic:
            row["fused_intrinsic_mean"] = float(fused.mean()) if bonuses else None
            for name, mod in self.modules.items():
                if name in bonuses:
                    row[f"{name}_raw_mean"] = float(np.mean(mod.last_raw))
                    row[f"{name}_norm_mean"] = float(np.mean(bonuses[name]))
                    row[f"{name}_loss"] = mod.last_loss if mod.trainable else None
        row.update(stats)
        self._last = {"bonuses": bonuses, "raw": {n: m.last_raw for n, m in self.modules.items()},
                      "fused": fused, "beta": beta_t, "optimized": optimized, "extrinsic": buf.ext_rewards}
        self._episodes = episodes
        return row

    # -- checkpoints ----------------------------------------------------------------
    def nets(self):
        nets = {f"policy.{k}": v for k, v in self.agent.net.nets().items()}
        for name, mod in self.modules.items():
            nets.update({f"{name}.{k}": v for k, v in mod.nets().items()})
        return nets

    def checkpoint(self, path):
        extra = {name: mod.state_dict() for name, mod in self.modules.items()}
        approximators.save_checkpoint(path, self.nets(), extra)

    def restore(self, path):
        nets, extra = approximators.load_checkpoint(path)
        mine = self.nets()
        for k, net in nets.items():
            approximators.set_params(mine[k], net)
        for name, mod in self.modules.items():
            mod.load_state_dict(extra[name])


def _train(run: Run, schedule, writer, timing, bonus_dump=None):
    rows = []
    for phase, steps in schedule:
        iters = max(1, steps // run.cfg.ppo.batch_size)
        for _ in range(iters):
            t0 = time.perf_counter()
            row = run.iterate(phase)
            dt = time.perf_counter() - t0
            writer.writerow({k: _fmt(row.get(k)) for k in run.columns()})
            rows.append(row)
            if timing is not None:
                timing.write(json.dumps({"iteration": row["iteration"], "seconds": dt,
                                         "fps": run.cfg.ppo.batch_size / dt}) + "\n")
            if bonus_dump is not None:
                last = run._last
                bonus_dump.write(json.dumps({
                    "iteration": row["iteration"], "phase": phase,
                    "raw": {k: np.asarray(v).tolist() for k, v in last["raw"].items() if v is not None},
                    "normalized": {k: v.tolist() for k, v in last["bonuses"].items()},
                }) + "\n")
        if phase == PRETRAIN and run.cfg.checkpoint_phases and writer.ckpt_dir is not None:
            run.checkpoint(writer.ckpt_dir / f"seed{run.seed}_{PRETRAIN}")
    return rows


class _CsvWriter:
    def __init__(self, fh, columns, ckpt_dir=None):
        fh.write(f"# {METRICS_VERSION}\n")
        self._w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        self._w.writeheader()
        self.ckpt_dir = ckpt_dir

    def writerow(self, row):
        self._w.writerow(row)


def final_scores(rows, window=SCORE_WINDOW):
    """Mean episodic return / success over episodes in the last `window` fraction of iterations."""
    n = len(rows)
    tail = rows[n - max(1, math.ceil(window * n)):]
    eps = [(r["episodic_return"], r["success_rate"], r["episodes"]) for r in tail if r["episodes"]]
    if not eps:
        return None, None
    w = np.array([e[2] for e in eps], np.float64)
    ret = float(np.sum(w * [e[0] for e in eps]) / w.sum())
    succ = float(np.sum(w * [e[1] for e in eps]) / w.sum())
    return ret, succ


def schedule_of(cfg: ExperimentConfig):
    if cfg.phases is None:
        return [(MIXED, cfg.ppo.total_steps)]
    return cfg.phases.phases()


def run_one(cfg: ExperimentConfig, seed: int, candidate: str | None = None, out_dir=None):
    """Train one seed; write metrics_seed{N}.csv (+ timing sidecar). Returns the run record."""
    candidate = candidate or cfg.candidate
    out = Path(out_dir or Path(cfg.out_dir) / cfg.task / slug(candidate))
    out.mkdir(parents=True, exist_ok=True)
    record = {"seed": seed, "candidate": parse_candidate(candidate).label, "task": cfg.task}
    try:
        run = Run(cfg, seed, candidate)
        if cfg.render_ascii:
            print(render_ascii(run.env.envs[0].state))
        ckpt = out / "checkpoints" if cfg.phases is not None else None
        with open(out / f"metrics_seed{seed}.csv", "w", newline="") as fh, \
                open(out / f"timing_seed{seed}.jsonl", "w") as tfh:
            dump = open(out / f"bonuses_seed{seed}.jsonl", "w") if cfg.dump_bonuses else None
            try:
                rows = _train(run, schedule_of(cfg), _CsvWriter(fh, run.columns(), ckpt), tfh, dump)
            finally:
                if dump:
                    dump.close()
        score_rows = [r for r in rows if r["phase"] != PRETRAIN] or rows
        ret, succ = final_scores(score_rows)
        record.update(status="ok", final_score=ret, final_success_rate=succ, iterations=len(rows),
                      frames=run.frames)
    except Exception as exc:  # one failing cell must not abort a sweep
        logger.exception("run failed: %s seed %s", candidate, seed)
        record.update(status="failed", error=repr(exc), traceback=traceback.format_exc())
    return record


def _summary(cfg, candidate, records):
    return {
        "candidate": parse_candidate(candidate).label,
        "type": parse_candidate(candidate).type_tag,
        "group": parse_candidate(candidate).group,
        "task": cfg.task,
        "score_definition": f"mean episodic extrinsic return over the last {int(SCORE_WINDOW * 100)}% "
                            "of (non-pretrain) iterations",
        "config": cfg.to_dict(),
        "runs": sorted(records, key=lambda r: r["seed"]),
    }


def write_summary(path, summary):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, seeds=None, candidate=None, workers=None):
    """Every seed of one candidate; writes metrics CSVs and summary.json. Returns the summary."""
    candidate = candidate or cfg.candidate
    seeds = list(seeds or cfg.seeds)
    out = Path(cfg.out_dir) / cfg.task / slug(candidate)
    records = _map(run_one, [(cfg, s, candidate, out) for s in seeds], workers)
    summary = _summary(cfg, candidate, records)
    write_summary(out / "summary.json", summary)
    return summary


def run_phased(cfg: ExperimentConfig, schedule: PhaseSchedule | None = None, **kw):
    """Pretrain on beta*I only, then finetune on E only, carrying all parameters over."""
    if schedule is not None:
        cfg = cfg.with_(phases={"pretrain_steps": schedule.pretrain_steps,
                                "finetune_steps": schedule.finetune_steps})
    if cfg.phases is None:
        raise ValueError("run_phased needs a phase schedule")
    return run_experiment(cfg, **kw)


def sweep(cfg: ExperimentConfig, candidates=None, workers=None):
    """All (candidate, seed) cells; failures are recorded per cell."""
    candidates = list(candidates or cfg.candidates or [cfg.candidate])
    cells = [(cfg, s, c, Path(cfg.out_dir) / cfg.task / slug(c)) for c in candidates for s in cfg.seeds]
    records = _map(run_one, cells, workers)
    out = {}
    for c in candidates:
        label = parse_candidate(c).label
        mine = [r for r in records if r["candidate"] == label]
        summary = _summary(cfg, c, mine)
        write_summary(Path(cfg.out_dir) / cfg.task / slug(c) / "summary.json", summary)
        out[label] = summary
    return out


def _star(args):
    return run_one(*args)


def _map(fn, arglist, workers=None):
    workers = workers or int(os.environ.get("HIRE_THREADS", "1"))
    if workers <= 1 or len(arglist) <= 1:
        return [fn(*a) for a in arglist]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_star, arglist))


# -- FPS ----------------------------------------------------------------------------

def bench_fps(cfg: ExperimentConfig, candidates, seconds=10.0, warmup_iters=2, seed=0):
    """Env frames per wall-clock second of the full training loop, per candidate."""
    if seconds < 10:
        logger.warning("bench_fps: %.1fs per candidate is too short for stable numbers (use >= 10)", seconds)
    table = []
    for c in candidates:
        run = Run(cfg, seed, c)
        for _ in range(warmup_iters):
            run.iterate()
        frames, t0 = 0, time.perf_counter()
        while True:
            run.iterate()
            frames += cfg.ppo.batch_size
            elapsed = time.perf_counter() - t0
            if elapsed >= seconds:
                break
        table.append({"candidate": run.candidate.label, "type": run.candidate.type_tag,
                      "n_rewards": run.candidate.n, "frames": frames, "seconds": elapsed,
                      "fps": frames / elapsed})
    return table


def format_fps_table(table) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["candidate", "type", "n_rewards", "frames", "seconds", "fps"],
                       lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow({k: (f"{v:.3f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def read_metrics(path):
    """Parse a metrics CSV (skipping the version comment) into a list of dicts."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing metrics version header")
        return list(csv.DictReader(fh))

