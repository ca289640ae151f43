"""Roll a random policy through a MultiRoom layout and look at what each module pays.

Run: python3 demos/bonus_anatomy.py
"""
import numpy as np

from hire.gridworlds import GridSpec, VectorEnv, render_ascii
from hire.rewards import Rollout, make_module

E, T = 4, 64
env = VectorEnv(GridSpec("MultiRoom", n_rooms=3, room_size=5), E, seed=3)
obs = env.reset()
print(render_ascii(env.envs[0].state), "\n")

rng = np.random.default_rng(0)
buf_obs, buf_next, buf_act, buf_done = [], [], [], []
for t in range(T):
    a = rng.integers(0, env.n_actions, E)
    nxt, _, done, _, info = env.step(a)
    final = nxt.copy()
    for i, fo in info["final_obs"].items():
        final[i] = fo
    buf_obs.append(obs), buf_next.append(final), buf_act.append(a), buf_done.append(done)
    obs = nxt
ro = Rollout(np.array(buf_obs), np.array(buf_act), np.array(buf_next), np.array(buf_done))

modules = {n: make_module(n, env.obs_dim, env.n_actions, E, rng=1) for n in ("NGU", "RE3", "ICM", "E3B")}
print(f"{'module':<6} {'raw mean':>10} {'raw max':>10} {'norm mean':>10} {'norm max':>10}")
for name, m in modules.items():
    out = m.compute(ro)
    print(f"{name:<6} {m.last_raw.mean():>10.4f} {m.last_raw.max():>10.4f} {out.mean():>10.4f} {out.max():>10.4f}")

# novelty fades as the episodic memory of env 0 fills up
ngu = modules["NGU"]
print("\nNGU bonus along env 0 (every 8th step):", np.round(ngu.compute(ro)[::8, 0], 3))

# ICM trains its encoder mostly through the inverse head; the forward target moves with it,
# so the joint loss can fall while the forward error and the raw bonus grow
icm = modules["ICM"]
print("\nICM update  joint loss  forward MSE  raw error")
for i in range(21):
    if i % 5 == 0:
        print(f"{i:>10}  {icm.last_loss if i else float('nan'):>10.4f}  {icm.last_forward_loss:>11.5f}"
              f"  {icm.compute_raw(ro).mean():>9.4f}")
    icm.update(ro)
