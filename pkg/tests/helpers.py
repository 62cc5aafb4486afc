"""Shared test utilities: finite-difference oracles, brute-force kNN, and the
tiny tabular MDPs used to sanity-check training. Everything here is kept
independent of the implementation paths it checks."""

from __future__ import annotations

import numpy as np

from wolpertinger.action_index import ActionSet
from wolpertinger.envs.base import Environment, EnvStep
from wolpertinger.nets import Mlp, forward

FD_STEP = 1e-5
REL_TOL = 1e-4
DENOM_FLOOR = 1e-8


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), DENOM_FLOOR)
    return float(np.max(np.abs(a - b) / denom))


def fd_gradient(objective, arrays: list[np.ndarray], step: float = FD_STEP) -> list[np.ndarray]:
    """Central finite differences of a scalar objective w.r.t. each array,
    perturbing entries in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            hi = objective()
            arr[idx] = orig - step
            lo = objective()
            arr[idx] = orig
            g[idx] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def fd_net_param_grads(net: Mlp, x, output_grad, step: float = FD_STEP):
    """FD gradients of (forward(net, x) . output_grad) for every parameter."""
    og = np.asarray(output_grad, dtype=np.float64)

    def objective() -> float:
        return float(np.sum(np.asarray(forward(net, x)) * og))

    gw = fd_gradient(objective, net.weights, step)
    gb = fd_gradient(objective, net.biases, step)
    return gw, gb


def fd_input_grad(net: Mlp, x, output_grad, step: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    og = np.asarray(output_grad, dtype=np.float64)

    def objective() -> float:
        return float(np.sum(np.asarray(forward(net, x)) * og))

    return fd_gradient(objective, [x], step)[0]


def brute_force_knn(vectors: np.ndarray, query: np.ndarray, k: int):
    """Plain-Python kNN oracle: sort by (squared distance, id)."""
    scored = []
    for i, v in enumerate(vectors):
        d = v - query
        scored.append((float(d @ d), i))
    scored.sort()
    top = scored[: min(k, len(scored))]
    return [i for _, i in top], [d for d, _ in top]


class TwoStateMdp(Environment):
    """Deterministic 2-state MDP: action j jumps to state j, reward 1 always,
    never terminal. With discount g the fixed point is Q = 1/(1-g)."""

    def __init__(self, seed: int = 0):
        self._state = 0
        self._actions = ActionSet(np.array([[0.0], [1.0]]))

    @property
    def observation_dim(self) -> int:
        return 2

    @property
    def action_set(self) -> ActionSet:
        return self._actions

    def _obs(self) -> np.ndarray:
        out = np.zeros(2)
        out[self._state] = 1.0
        return out

    def reset(self) -> np.ndarray:
        self._state = 0
        return self._obs()

    def step(self, action_id: int) -> EnvStep:
        self._state = int(action_id)
        return EnvStep(observation=self._obs(), reward=1.0, terminal=False)


CHAIN5_DELTAS = (-1, 0, 1, 2)


class ChainMdp(Environment):
    """5-state chain, 4 actions shifting by (-1, 0, +1, +2) with clamping.
    Reward 1.0 on entering the last state (terminal), else -0.1."""

    def __init__(self, seed: int = 0):
        self._state = 0
        self._done = True
        self._actions = ActionSet(np.asarray(CHAIN5_DELTAS, dtype=np.float64)[:, None])

    @property
    def observation_dim(self) -> int:
        return 5

    @property
    def action_set(self) -> ActionSet:
        return self._actions

    def _obs(self) -> np.ndarray:
        out = np.zeros(5)
        out[self._state] = 1.0
        return out

    def reset(self) -> np.ndarray:
        self._state = 0
        self._done = False
        return self._obs()

    def step(self, action_id: int) -> EnvStep:
        if self._done:
            raise RuntimeError("episode is over")
        self._state = int(np.clip(self._state + CHAIN5_DELTAS[int(action_id)], 0, 4))
        self._done = self._state == 4
        reward = 1.0 if self._done else -0.1
        return EnvStep(observation=self._obs(), reward=reward, terminal=self._done)


def chain5_optimal_return(horizon: int) -> float:
    """Value iteration over the 5-state chain, undiscounted, finite horizon."""
    values = np.zeros(5)
    for _ in range(horizon):
        new = values.copy()
        for s in range(4):
            best = -np.inf
            for d in CHAIN5_DELTAS:
                ns = int(np.clip(s + d, 0, 4))
                r = 1.0 if ns == 4 else -0.1
                cont = 0.0 if ns == 4 else values[ns]
                best = max(best, r + cont)
            new[s] = best
        values = new
    return float(values[0])
