"""Procedurally generated sparse-reward gridworlds (MultiRoom, KeyCorridor, DynamicObstacles).

Observations are a 7x7 egocentric window, one-hot over cell types, followed by
a heading one-hot and a carried-key flag. The agent sits at the bottom-centre
of the window facing "up".
"""
from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field

import numpy as np

# cell types stored in the grid
EMPTY, WALL, DOOR_CLOSED, DOOR_OPEN, DOOR_LOCKED, KEY, GOAL, LAVA, OBSTACLE = range(9)
CELL_NAMES = ["empty", "wall", "door_closed", "door_open", "door_locked", "key", "goal", "lava", "obstacle"]
# observation channel 0 marks cells outside the grid; cell type c maps to channel c + 1
N_CHANNELS = len(CELL_NAMES) + 1
VIEW = 7

LEFT, RIGHT, FORWARD, PICKUP, TOGGLE = range(5)
N_ACTIONS = 5
ACTION_NAMES = ["left", "right", "forward", "pickup", "toggle"]

# heading 0=N, 1=E, 2=S, 3=W; grid indexed [y, x] with y growing downwards
DIRS = np.array([(0, -1), (1, 0), (0, 1), (-1, 0)])

OBS_DIM = VIEW * VIEW * N_CHANNELS + 4 + 1

FAMILIES = ("MultiRoom", "KeyCorridor", "DynamicObstacles")

_ASCII = {EMPTY: ".", WALL: "#", DOOR_CLOSED: "D", DOOR_OPEN: "/", DOOR_LOCKED: "L", KEY: "k",
          GOAL: "G", LAVA: "~", OBSTACLE: "o"}


class GenerationError(RuntimeError):
    pass


def _view_offsets():
    # world offset of each view slot for each heading
    r, c = np.mgrid[0:VIEW, 0:VIEW]
    fwd = (VIEW - 1) - r
    lat = c - VIEW // 2
    dx = np.empty((4, VIEW, VIEW), np.int64)
    dy = np.empty((4, VIEW, VIEW), np.int64)
    for h in range(4):
        f, rt = DIRS[h], DIRS[(h + 1) % 4]
        dx[h] = fwd * f[0] + lat * rt[0]
        dy[h] = fwd * f[1] + lat * rt[1]
    return dx, dy


_DX, _DY = _view_offsets()
_EYE = np.eye(N_CHANNELS, dtype=np.float32)


@dataclass
class GridSpec:
    family: str = "MultiRoom"
    n_rooms: int = 4
    room_size: int = 5
    grid_w: int = 0          # 0 = family default
    grid_h: int = 0
    max_steps: int = 0       # 0 = family default
    n_obstacles: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.room_size < 4:
            raise ValueError("room_size must be >= 4")
        if self.family == "MultiRoom" and self.n_rooms < 2:
            raise ValueError("MultiRoom needs n_rooms >= 2")
        if self.family == "KeyCorridor" and self.n_rooms < 2:
            raise ValueError("KeyCorridor needs n_rooms >= 2 rooms per side")
        if self.max_steps < 0 or self.n_obstacles < 0:
            raise ValueError("max_steps and n_obstacles must be non-negative")
        w, h = self.default_size()
        self.grid_w = self.grid_w or w
        self.grid_h = self.grid_h or h
        if self.max_steps == 0:
            self.max_steps = self.default_max_steps()

    def default_size(self):
        s = self.room_size - 1
        if self.family == "MultiRoom":
            side = s * self.n_rooms + 1
            return side, side
        if self.family == "KeyCorridor":
            return s * self.n_rooms + 1, 2 * self.room_size + 1
        return 16, 16

    def default_max_steps(self):
        if self.family == "MultiRoom":
            return 20 * self.n_rooms
        if self.family == "KeyCorridor":
            return 30 * self.room_size ** 2
        return 4 * self.grid_w * self.grid_h

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class GridState:
    grid: np.ndarray
    agent: tuple[int, int]
    heading: int
    max_steps: int
    carrying: str | None = None
    t: int = 0
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    velocities: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    goal: tuple[int, int] = (0, 0)
    key: tuple[int, int] | None = None
    done: bool = False

    def copy(self) -> GridState:
        return dataclasses.replace(self, grid=self.grid.copy(), obstacles=self.obstacles.copy(),
                                   velocities=self.velocities.copy())

    @property
    def front(self) -> tuple[int, int]:
        d = DIRS[self.heading]
        return self.agent[0] + int(d[0]), self.agent[1] + int(d[1])


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    truncated: bool
    success: bool = False


# -- reachability -----------------------------------------------------------------

def flood_fill(grid, start, passable=(EMPTY, DOOR_CLOSED, DOOR_OPEN, KEY, GOAL)):
    """Boolean mask of cells reachable from `start` through 4-connected passable cells."""
    h, w = grid.shape
    ok = np.isin(grid, passable)
    seen = np.zeros_like(ok)
    x0, y0 = start
    seen[y0, x0] = True
    q = deque([(x0, y0)])
    while q:
        x, y = q.popleft()
        for dx, dy in DIRS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and ok[ny, nx] and not seen[ny, nx]:
                seen[ny, nx] = True
                q.append((nx, ny))
    return seen


def is_solvable(state: GridState) -> bool:
    grid = state.grid.copy()
    grid[grid == OBSTACLE] = EMPTY
    reach = flood_fill(grid, state.agent)
    if state.key is not None:
        kx, ky = state.key
        if not reach[ky, kx]:
            return False
        grid[grid == DOOR_LOCKED] = DOOR_OPEN
        reach = flood_fill(grid, state.agent)
    gx, gy = state.goal
    return bool(reach[gy, gx])


# -- generation ---------------------------------------------------------------------

def _interior(x0, y0, s):
    return [(x, y) for y in range(y0 + 1, y0 + s - 1) for x in range(x0 + 1, x0 + s - 1)]


def _carve(grid, x0, y0, s):
    grid[y0 + 1:y0 + s - 1, x0 + 1:x0 + s - 1] = EMPTY


def _pick(rng, cells):
    return cells[int(rng.integers(len(cells)))]


def _multiroom(spec, rng):
    s = spec.room_size
    cols = (spec.grid_w - 1) // (s - 1)
    rows = (spec.grid_h - 1) // (s - 1)
    if cols * rows < spec.n_rooms:
        raise GenerationError("grid too small for the requested rooms")
    # self-avoiding random walk over the room lattice
    chain = [(int(rng.integers(cols)), int(rng.integers(rows)))]
    while len(chain) < spec.n_rooms:
        cx, cy = chain[-1]
        nbrs = [(cx + dx, cy + dy) for dx, dy in DIRS
                if 0 <= cx + dx < cols and 0 <= cy + dy < rows and (cx + dx, cy + dy) not in chain]
        if not nbrs:
            return None
        chain.append(_pick(rng, nbrs))
    grid = np.full((spec.grid_h, spec.grid_w), WALL, np.int8)
    for cx, cy in chain:
        _carve(grid, cx * (s - 1), cy * (s - 1), s)
    for (ax, ay), (bx, by) in zip(chain, chain[1:]):
        if ax != bx:  # vertical shared wall
            wx = max(ax, bx) * (s - 1)
            y = ay * (s - 1) + 1 + int(rng.integers(s - 2))
            grid[y, wx] = DOOR_CLOSED
        else:
            wy = max(ay, by) * (s - 1)
            x = ax * (s - 1) + 1 + int(rng.integers(s - 2))
            grid[wy, x] = DOOR_CLOSED
    sx, sy = chain[0]
    agent = _pick(rng, _interior(sx * (s - 1), sy * (s - 1), s))
    gx, gy = chain[-1]
    goal = _pick(rng, _interior(gx * (s - 1), gy * (s - 1), s))
    grid[goal[1], goal[0]] = GOAL
    return GridState(grid, agent, int(rng.integers(4)), spec.max_steps, goal=goal)


def _keycorridor(spec, rng):
    s, n = spec.room_size, spec.n_rooms
    w, h = spec.grid_w, spec.grid_h
    if w < n * (s - 1) + 1 or h < 2 * s + 1:
        raise GenerationError("grid too small for KeyCorridor")
    grid = np.full((h, w), WALL, np.int8)
    cy = s  # corridor row
    grid[cy, 1:n * (s - 1)] = EMPTY
    rooms = []  # (x0, y0, door cell)
    for side, y0 in ((0, 0), (1, s + 1)):
        for i in range(n):
            x0 = i * (s - 1)
            _carve(grid, x0, y0, s)
            dx = x0 + 1 + int(rng.integers(s - 2))
            dy = s - 1 if side == 0 else s + 1
            grid[dy, dx] = DOOR_CLOSED
            rooms.append((x0, y0, (dx, dy)))
    gi = int(rng.integers(len(rooms)))
    ki = int(rng.integers(len(rooms) - 1))
    ki += ki >= gi
    gx0, gy0, (ddx, ddy) = rooms[gi]
    grid[ddy, ddx] = DOOR_LOCKED
    goal = _pick(rng, _interior(gx0, gy0, s))
    grid[goal[1], goal[0]] = GOAL
    kx0, ky0, _ = rooms[ki]
    key = _pick(rng, _interior(kx0, ky0, s))
    grid[key[1], key[0]] = KEY
    agent = (1 + int(rng.integers(n * (s - 1) - 1)), cy)
    return GridState(grid, agent, int(rng.integers(4)), spec.max_steps, goal=goal, key=key)


def _dynamic(spec, rng):
    w, h = spec.grid_w, spec.grid_h
    grid = np.full((h, w), WALL, np.int8)
    grid[1:h - 1, 1:w - 1] = EMPTY
    agent, goal = (1, 1), (w - 2, h - 2)
    grid[goal[1], goal[0]] = GOAL
    free = [(x, y) for y in range(1, h - 1) for x in range(1, w - 1)
            if (x, y) not in (agent, goal) and abs(x - agent[0]) + abs(y - agent[1]) > 1]
    if spec.n_obstacles > len(free):
        raise GenerationError("too many obstacles for the room")
    idx = rng.choice(len(free), size=spec.n_obstacles, replace=False)
    obstacles = np.array([free[i] for i in idx], np.int64).reshape(-1, 2)
    for x, y in obstacles:
        grid[y, x] = OBSTACLE
    return GridState(grid, agent, 1, spec.max_steps, goal=goal, obstacles=obstacles,
                     velocities=np.zeros_like(obstacles))


_GENERATORS = {"MultiRoom": _multiroom, "KeyCorridor": _keycorridor, "DynamicObstacles": _dynamic}


def generate(spec: GridSpec, rng_seed, max_tries: int = 100) -> GridState:
    """Build a solvable layout. Deterministic in (spec, rng_seed)."""
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_tries):
        try:
            state = _GENERATORS[spec.family](spec, rng)
        except GenerationError as exc:
            raise GenerationError(f"{exc} (seed={rng_seed})") from None
        if state is not None and is_solvable(state):
            return state
    raise GenerationError(f"no solvable {spec.family} layout after {max_tries} tries (seed={rng_seed})")


# -- dynamics -----------------------------------------------------------------------

def _move_obstacles(state: GridState, rng):
    grid = state.grid
    for i in range(len(state.obstacles)):
        x, y = state.obstacles[i]
        for _ in range(4):
            d = DIRS[int(rng.integers(4))]
            nx, ny = x + d[0], y + d[1]
            if grid[ny, nx] == EMPTY and (nx, ny) != tuple(state.agent):
                grid[y, x] = EMPTY
                grid[ny, nx] = OBSTACLE
                state.obstacles[i] = (nx, ny)
                state.velocities[i] = d
                break
        else:
            state.velocities[i] = 0


def step(state: GridState, action: int, rng=None):
    """Advance `state` in place. Returns (reward, done, truncated, success)."""
    if state.done:
        raise RuntimeError("step() called on a terminal state")
    if not 0 <= int(action) < N_ACTIONS:
        raise ValueError(f"action {action} out of range [0, {N_ACTIONS})")
    action = int(action)
    state.t += 1
    if len(state.obstacles) and rng is not None:
        _move_obstacles(state, rng)
    grid = state.grid
    fx, fy = state.front
    front = grid[fy, fx]
    reward, done, success = 0.0, False, False
    if action == LEFT:
        state.heading = (state.heading - 1) % 4
    elif action == RIGHT:
        state.heading = (state.heading + 1) % 4
    elif action == FORWARD:
        if front in (OBSTACLE, LAVA):
            reward, done = -1.0, True
        elif front in (EMPTY, DOOR_OPEN, GOAL):
            state.agent = (fx, fy)
            if front == GOAL:
                reward, done, success = 1.0 - 0.9 * (state.t / state.max_steps), True, True
    elif action == PICKUP:
        if front == KEY and state.carrying is None:
            state.carrying = "key"
            grid[fy, fx] = EMPTY
    elif action == TOGGLE:
        if front == DOOR_CLOSED:
            grid[fy, fx] = DOOR_OPEN
        elif front == DOOR_OPEN:
            grid[fy, fx] = DOOR_CLOSED
        elif front == DOOR_LOCKED and state.carrying == "key":
            grid[fy, fx] = DOOR_OPEN
    truncated = not done and state.t >= state.max_steps
    state.done = done or truncated
    return reward, done, truncated, success


def view_codes(state: GridState) -> np.ndarray:
    """7x7 int array of observation channels (0 = outside the grid)."""
    h, w = state.grid.shape
    xs = state.agent[0] + _DX[state.heading]
    ys = state.agent[1] + _DY[state.heading]
    inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    codes = state.grid[np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1)].astype(np.int64) + 1
    return np.where(inside, codes, 0)


def encode(state: GridState) -> np.ndarray:
    out = np.zeros(OBS_DIM, np.float32)
    out[:VIEW * VIEW * N_CHANNELS] = _EYE[view_codes(state)].ravel()
    out[VIEW * VIEW * N_CHANNELS + state.heading] = 1.0
    out[-1] = float(state.carrying is not None)
    return out


def render_ascii(state: GridState) -> str:
    arrows = "^>v<"
    rows = []
    for y, row in enumerate(state.grid):
        chars = [_ASCII[int(c)] for c in row]
        if y == state.agent[1]:
            chars[state.agent[0]] = arrows[state.heading]
        rows.append("".join(chars))
    return "\n".join(rows)


class GridWorld:
    """Single environment with its own RNG stream; reset() draws a fresh layout seed."""

    def __init__(self, spec: GridSpec, rng: np.random.Generator | int | None = None):
        self.spec = spec
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(
            spec.seed if rng is None else rng)
        self.state: GridState | None = None
        self.layout_seed = None

    def reset(self) -> np.ndarray:
        self.layout_seed = int(self.rng.integers(2 ** 63))
        self.state = generate(self.spec, self.layout_seed)
        return encode(self.state)

    def step(self, action) -> StepResult:
        r, done, trunc, success = step(self.state, action, self.rng)
        return StepResult(encode(self.state), r, done or trunc, trunc, success)

    def render(self) -> str:
        return render_ascii(self.state)


class VectorEnv:
    """E independent GridWorlds stepped in index order, with auto-reset.

    step() returns (obs, rewards, dones, truncated, info). For envs that finished,
    `obs` already belongs to the new episode, `info["final_obs"]` holds the terminal
    observation and `info["episode_boundary"]` is set.
    """

    def __init__(self, spec: GridSpec, num_envs: int, seed: int = 0):
        if num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        self.spec = spec
        self.num_envs = num_envs
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        streams = ss.spawn(num_envs)
        self.envs = [GridWorld(spec, np.random.default_rng(s)) for s in streams]
        self.ep_return = np.zeros(num_envs)
        self.ep_len = np.zeros(num_envs, np.int64)

    @property
    def obs_dim(self):
        return OBS_DIM

    @property
    def n_actions(self):
        return N_ACTIONS

    def reset(self) -> np.ndarray:
        self.ep_return[:] = 0
        self.ep_len[:] = 0
        return np.stack([e.reset() for e in self.envs])

    def step(self, actions):
        actions = np.asarray(actions)
        E = self.num_envs
        obs = np.empty((E, OBS_DIM), np.float32)
        rewards = np.zeros(E, np.float32)
        dones = np.zeros(E, bool)
        truncs = np.zeros(E, bool)
        success = np.zeros(E, bool)
        final_obs = {}
        episodes = []
        for i, env in enumerate(self.envs):
            r, done, trunc, succ = step(env.state, actions[i], env.rng)
            rewards[i] = r
            self.ep_return[i] += r
            self.ep_len[i] += 1
            if done or trunc:
                dones[i], truncs[i], success[i] = True, trunc, succ
                final_obs[i] = encode(env.state)
                episodes.append({"env": i, "return": float(self.ep_return[i]),
                                 "length": int(self.ep_len[i]), "success": bool(succ)})
                self.ep_return[i] = 0
                self.ep_len[i] = 0
                obs[i] = env.reset()
            else:
                obs[i] = encode(env.state)
        info = {"final_obs": final_obs, "episode_boundary": dones.copy(), "success": success,
                "episodes": episodes}
        return obs, rewards, dones, truncs, info
