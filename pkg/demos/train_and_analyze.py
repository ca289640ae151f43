"""A small sweep on an easy layout, then the same aggregate tables the full study produces.

Run: python3 demos/train_and_analyze.py   (a few minutes on one core)
Outputs land in $HIRE_OUT_DIR (default ./runs/demo).

Two rooms are easy enough for plain PPO, so here the dense bonus mostly competes
with the goal reward; expect the extrinsic baseline on top.
"""
import os
from pathlib import Path

from hire.analysis import analyze
from hire.harness import ExperimentConfig, read_metrics, sweep

here = Path(__file__).parent
out = Path(os.environ.get("HIRE_OUT_DIR", "runs")) / "demo"
cfg = ExperimentConfig.load(here / "configs" / "small.json").with_(out_dir=str(out))

summaries = sweep(cfg)
for label, s in summaries.items():
    scores = [r.get("final_success_rate") for r in s["runs"]]
    print(f"{label:<14} final success per seed: {scores}")

# the per-iteration CSV behind one of those numbers
rows = read_metrics(out / cfg.task / "C_NGU-RE3" / "metrics_seed1.csv")
print("\niteration  success  beta*I mean  entropy")
for r in rows[::8]:
    print(f"{r['iteration']:>9}  {r['success_rate'] or '-':>7.7}  {float(r['reward_beta_intrinsic_mean']):>11.4f}"
          f"  {float(r['entropy']):.3f}")

print()
print(analyze(out, out / "analysis", n_resamples=1000))
