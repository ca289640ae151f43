"""How four bonus streams become one optimized reward.

Run: python3 demos/fusion_walkthrough.py
"""
import numpy as np

from hire.fusion import FusionSpec, beta, combine, enumerate_candidates, fuse

rng = np.random.default_rng(0)
T, E = 6, 2
members = ["NGU", "RE3", "ICM"]
bonuses = [np.round(rng.random((T, E)), 2) for _ in members]
steps = np.arange(T)[:, None] + np.zeros(E, np.int64)

print("per-step bonuses for env 0:")
for name, b in zip(members, bonuses):
    print(f"  {name:<4}", b[:, 0])

for code in "SPCM":
    spec = FusionSpec(code, members)
    print(f"{code}({', '.join(members)}) ->", np.round(fuse(spec, bonuses, steps)[:, 0], 3))

# Cycle hands step t to member t mod n, so over 6 steps each member owns two of them
print("\ncycle owner per step:", [members[t % 3] for t in range(T)])

# the optimized reward adds the scaled hybrid bonus to the task reward
extrinsic = np.zeros((T, E))
extrinsic[-1, 0] = 0.8
spec = FusionSpec("C", members, beta0=0.25)
opt = combine(extrinsic, fuse(spec, bonuses, steps), beta(spec.beta0, spec.kappa, steps))
print("optimized reward env 0:", np.round(opt[:, 0], 3))
print("beta with decay 0.1 over 5 steps:", np.round(beta(1.0, 0.1, np.arange(5)), 4))

cands = enumerate_candidates(include_singles=True, include_extrinsic=True)
print(f"\n{len(cands)} candidates in total; the Cycle family:")
for c in cands:
    if c.strategy == "C":
        print(f"  {c.type_tag:<8} {c.label}")
