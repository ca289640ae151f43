"""Command line entry point: train, sweep, bench-fps, enumerate, analyze."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import analysis, harness
from .fusion import REWARD_NAMES, STRATEGIES, enumerate_candidates


def _load(args):
    cfg = harness.ExperimentConfig.load(args.config)
    if getattr(args, "render_ascii", False):
        cfg = cfg.with_(render_ascii=True)
    if getattr(args, "out_dir", None):
        cfg = cfg.with_(out_dir=args.out_dir)
    return cfg


def cmd_train(args):
    cfg = _load(args)
    seeds = [args.seed] if args.seed is not None else None
    summary = harness.run_experiment(cfg, seeds=seeds, candidate=args.candidate, workers=args.workers)
    for r in summary["runs"]:
        if r["status"] == "ok":
            print(f"{summary['candidate']} seed={r['seed']} score={r['final_score']} "
                  f"success={r['final_success_rate']}")
        else:
            print(f"{summary['candidate']} seed={r['seed']} FAILED {r['error']}")
    return 0 if all(r["status"] == "ok" for r in summary["runs"]) else 1


def cmd_sweep(args):
    cfg = _load(args)
    out = harness.sweep(cfg, workers=args.workers)
    failed = 0
    for label, s in out.items():
        ok = [r for r in s["runs"] if r["status"] == "ok"]
        failed += len(s["runs"]) - len(ok)
        print(f"{label:<24} runs={len(ok)}/{len(s['runs'])}")
    return 1 if failed else 0


def cmd_bench(args):
    cfg = _load(args)
    cands = args.candidates.split(";") if args.candidates else (cfg.candidates or [cfg.candidate])
    table = harness.bench_fps(cfg, cands, seconds=args.seconds)
    sys.stdout.write(harness.format_fps_table(table))
    return 0


def cmd_enumerate(args):
    rewards = [r.strip() for r in args.rewards.split(",") if r.strip()]
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    cands = enumerate_candidates(rewards, strategies, include_singles=not args.hybrids_only,
                                 include_extrinsic=not args.hybrids_only)
    if args.json:
        print(json.dumps([{"label": c.label, "type": c.type_tag, "group": c.group} for c in cands], indent=2))
    else:
        for c in cands:
            print(f"{c.type_tag:<8} {c.label}")
        print(f"# {len(cands)} candidates")
    return 0


def cmd_analyze(args):
    report = analysis.analyze(args.runs, args.out, n_resamples=args.resamples, seed=args.seed)
    sys.stdout.write(report)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hire", description="Mixed exploration-bonus experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one candidate over the configured seeds")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--candidate", help="label such as 'C(NGU, RE3)', 'HIRE-C2:C(N, R)' or 'extrinsic'")
    t.add_argument("--render-ascii", action="store_true", help="print the first layout as text")
    t.add_argument("--out-dir")
    t.add_argument("--workers", type=int)
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sweep", help="every candidate x seed in the config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir")
    s.add_argument("--workers", type=int)
    s.set_defaults(fn=cmd_sweep)

    b = sub.add_parser("bench-fps", help="frames per second per candidate")
    b.add_argument("--config", required=True)
    b.add_argument("--seconds", type=float, default=10.0)
    b.add_argument("--candidates", help="';'-separated labels, default: config candidates")
    b.set_defaults(fn=cmd_bench)

    e = sub.add_parser("enumerate", help="list reward candidates")
    e.add_argument("--rewards", default=",".join(REWARD_NAMES))
    e.add_argument("--strategies", default=",".join(STRATEGIES))
    e.add_argument("--hybrids-only", action="store_true")
    e.add_argument("--json", action="store_true")
    e.set_defaults(fn=cmd_enumerate)

    a = sub.add_parser("analyze", help="aggregate summary.json files into tables")
    a.add_argument("--runs", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--resamples", type=int, default=2000)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(fn=cmd_analyze)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
