"""Grid world with puddles where each action is an n-step {down,right} plan.

Cell rewards: empty -1, puddle -3, goal +250 (episode ends). A plan executes
its base moves in order, stopping early at the goal; moves past the grid edge
are no-ops that still charge the current cell. The observation is a flattened
one-hot window around the agent ((2w+1)^2 cells x 4 cell types; out-of-grid
cells encode as all zeros).

Plan encoding: step j of a plan is one-hot, down = (1,0), right = (0,1),
concatenated to a 2n-vector. The action id is the plan read as a binary
number, most significant step first, with down = 0 and right = 1.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from ..action_index import ActionSet
from .base import Environment, EnvStep

EMPTY, PUDDLE, START, GOAL = 0, 1, 2, 3
_CHAR_TO_CELL = {".": EMPTY, "P": PUDDLE, "S": START, "G": GOAL}
_CELL_TO_CHAR = {v: k for k, v in _CHAR_TO_CELL.items()}

DOWN, RIGHT = 0, 1

GOAL_REWARD = 250.0
_CELL_REWARD = {EMPTY: -1.0, PUDDLE: -3.0, START: -1.0}


def puddle_reward(cell_type: int) -> tuple[float, bool]:
    """(reward, terminal) for stepping onto a cell. The start cell counts as
    empty once the agent has left it."""
    if cell_type == GOAL:
        return GOAL_REWARD, True
    if cell_type not in _CELL_REWARD:
        raise ValueError(f"unknown cell type {cell_type}")
    return _CELL_REWARD[cell_type], False


def encode_plan(steps, n: int) -> np.ndarray:
    """Concatenated one-hot encoding of an n-step plan."""
    steps = list(steps)
    if len(steps) != n:
        raise ValueError(f"plan has {len(steps)} steps, expected {n}")
    out = np.zeros(2 * n, dtype=np.float64)
    for j, s in enumerate(steps):
        if s not in (DOWN, RIGHT):
            raise ValueError(f"invalid base move {s}")
        out[2 * j + s] = 1.0
    return out


def plan_to_id(steps, n: int) -> int:
    steps = list(steps)
    if len(steps) != n:
        raise ValueError(f"plan has {len(steps)} steps, expected {n}")
    aid = 0
    for s in steps:
        aid = (aid << 1) | s
    return aid


def id_to_plan(action_id: int, n: int) -> list[int]:
    if not 0 <= action_id < (1 << n):
        raise ValueError(f"action id {action_id} out of range for {n}-step plans")
    return [(action_id >> (n - 1 - j)) & 1 for j in range(n)]


def plan_action_set(n: int) -> ActionSet:
    """All 2^n plan encodings, indexed by plan id."""
    ids = np.arange(1 << n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    bits = (ids[:, None] >> shifts[None, :]) & 1
    emb = np.zeros((ids.size, 2 * n), dtype=np.float64)
    emb[:, 0::2] = 1.0 - bits
    emb[:, 1::2] = bits
    return ActionSet(emb)


def parse_ascii_map(text: str) -> np.ndarray:
    rows = [line for line in (ln.strip() for ln in text.splitlines()) if line]
    if not rows:
        raise ValueError("empty map")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("ragged map rows")
    try:
        grid = np.asarray([[_CHAR_TO_CELL[ch] for ch in row] for row in rows], dtype=np.int8)
    except KeyError as exc:
        raise ValueError(f"unknown map character {exc.args[0]!r}") from None
    _validate_grid(grid)
    return grid


def grid_to_ascii(grid: np.ndarray) -> str:
    return "\n".join("".join(_CELL_TO_CHAR[int(c)] for c in row) for row in grid) + "\n"


def _validate_grid(grid: np.ndarray) -> None:
    if grid.ndim != 2:
        raise ValueError("grid must be 2-D")
    if int((grid == START).sum()) != 1:
        raise ValueError("grid must contain exactly one start cell")
    if grid[-1, -1] != GOAL:
        raise ValueError("goal must sit in the bottom-right corner")
    if int((grid == GOAL).sum()) != 1:
        raise ValueError("grid must contain exactly one goal cell")


def generate_puddle_map(rows: int, cols: int, seed: int, puddle_rects: int | None = None) -> np.ndarray:
    """Deterministic map: start top-left, goal bottom-right, rectangular
    puddles placed from the seed (never covering start or goal)."""
    if rows < 2 or cols < 2:
        raise ValueError("map must be at least 2x2")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    grid = np.full((rows, cols), EMPTY, dtype=np.int8)
    if puddle_rects is None:
        puddle_rects = max(2, (rows * cols) // 100)
    for _ in range(puddle_rects):
        h = int(rng.integers(1, max(2, rows // 4) + 1))
        w = int(rng.integers(1, max(2, cols // 4) + 1))
        r = int(rng.integers(0, rows - h + 1))
        c = int(rng.integers(0, cols - w + 1))
        grid[r : r + h, c : c + w] = PUDDLE
    grid[0, 0] = START
    grid[-1, -1] = GOAL
    return grid


def benchmark_map(size: int) -> np.ndarray:
    """Fixed benchmark map shipped with the package (sizes 20 and 50)."""
    name = f"benchmark_{size}x{size}.txt"
    ref = resources.files("wolpertinger.envs").joinpath("maps", name)
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise ValueError(f"no benchmark map of size {size}") from None
    return parse_ascii_map(text)


def dp_optimal_return(grid: np.ndarray) -> float:
    """Optimal episodic return over monotone {down,right} paths, by dynamic
    programming from the goal corner backwards. Independent of the plan
    mechanics: early goal stop makes plan granularity immaterial."""
    _validate_grid(grid)
    rows, cols = grid.shape
    value = np.full((rows, cols), -np.inf)
    value[rows - 1, cols - 1] = 0.0
    for r in range(rows - 1, -1, -1):
        for c in range(cols - 1, -1, -1):
            if r == rows - 1 and c == cols - 1:
                continue
            best = -np.inf
            for nr, nc in ((r + 1, c), (r, c + 1)):
                if nr < rows and nc < cols:
                    step = puddle_reward(int(grid[nr, nc]))[0]
                    best = max(best, step + value[nr, nc])
            value[r, c] = best
    sr, sc = np.argwhere(grid == START)[0]
    return float(value[sr, sc])


class PuddleWorld(Environment):
    """Plan-level puddle world; one env step executes an n-move plan."""

    def __init__(self, grid: np.ndarray, plan_length: int, window_radius: int = 2, seed: int = 0):
        grid = np.asarray(grid, dtype=np.int8)
        _validate_grid(grid)
        if plan_length < 1:
            raise ValueError("plan_length must be >= 1")
        self.grid = grid
        self.plan_length = plan_length
        self.window_radius = window_radius
        self._start = tuple(int(v) for v in np.argwhere(grid == START)[0])
        self._pos = self._start
        self._done = True
        self._actions: ActionSet | None = None
        # the dynamics are deterministic; the seed is accepted for interface
        # uniformity but never drawn from
        self._seed = seed

    @property
    def observation_dim(self) -> int:
        side = 2 * self.window_radius + 1
        return side * side * 4

    @property
    def action_set(self) -> ActionSet:
        if self._actions is None:
            self._actions = plan_action_set(self.plan_length)
        return self._actions

    def reset(self) -> np.ndarray:
        self._pos = self._start
        self._done = False
        return self._observe()

    def _observe(self) -> np.ndarray:
        w = self.window_radius
        side = 2 * w + 1
        obs = np.zeros((side, side, 4), dtype=np.float64)
        r0, c0 = self._pos
        rows, cols = self.grid.shape
        for dr in range(-w, w + 1):
            for dc in range(-w, w + 1):
                r, c = r0 + dr, c0 + dc
                if 0 <= r < rows and 0 <= c < cols:
                    obs[dr + w, dc + w, int(self.grid[r, c])] = 1.0
        return obs.reshape(-1)

    def step(self, action_id: int) -> EnvStep:
        if self._done:
            raise RuntimeError("episode is over; call reset()")
        moves = id_to_plan(int(action_id), self.plan_length)
        rows, cols = self.grid.shape
        r, c = self._pos
        total = 0.0
        for mv in moves:
            nr, nc = (r + 1, c) if mv == DOWN else (r, c + 1)
            if nr >= rows or nc >= cols:
                # clamped no-op: still charged, at the current cell's rate
                cell = PUDDLE if int(self.grid[r, c]) == PUDDLE else EMPTY
            else:
                r, c = nr, nc
                cell = int(self.grid[r, c])
            reward, terminal = puddle_reward(cell)
            total += reward
            if terminal:
                self._done = True
                break
        self._pos = (r, c)
        return EnvStep(observation=self._observe(), reward=total, terminal=self._done)
