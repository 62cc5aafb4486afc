"""Cart-pole swing-up with a discretized force action set.

Frictionless cart (mass 1.0) on an unbounded track with a uniform-rod pole
(mass 0.1, per-episode half-length drawn from [0.4, 0.7]). Actions are i
equally spaced force values spanning [-F_max, +F_max] exactly; the embedding
is the 1-D force itself. One env step integrates the equations of motion for
one control interval (dt = 0.01) with classic RK4.

Reward is +1 when the pole is within 5 degrees of vertical AND the cart sits
in the middle 10% of the (reward-defining) track, else 0. Episodes truncate
after 500 steps; the pole starts hanging downward at a random angle.
"""

from __future__ import annotations

import numpy as np

from ..action_index import ActionSet
from .base import Environment, EnvStep

GRAVITY = 9.81
CART_MASS = 1.0
POLE_MASS = 0.1
MAX_FORCE = 10.0
DT = 0.01
TRACK_HALF_LENGTH = 2.4
REWARD_ANGLE = np.deg2rad(5.0)
REWARD_X = 0.1 * TRACK_HALF_LENGTH  # middle 10% of the 2 * 2.4 track
EPISODE_CAP = 500
POLE_HALF_LENGTH_RANGE = (0.4, 0.7)


def _accelerations(state: np.ndarray, force: float, half_len: float) -> tuple[float, float]:
    """Solve the coupled cart/pole equations of motion.

    theta is measured from upright. With A = M + m, B = m*l*cos(theta),
    D = (4/3) m l^2 (rod inertia about the pivot):

        A x'' + B theta''          = F + m l theta'^2 sin(theta)
        B x'' + D theta''          = m g l sin(theta)
    """
    _, xdot, th, thdot = state
    m, big_m, l = POLE_MASS, CART_MASS, half_len
    sin, cos = np.sin(th), np.cos(th)
    a = big_m + m
    b = m * l * cos
    d = (4.0 / 3.0) * m * l * l
    rhs1 = force + m * l * thdot * thdot * sin
    rhs2 = m * GRAVITY * l * sin
    det = a * d - b * b
    xdd = (d * rhs1 - b * rhs2) / det
    thdd = (a * rhs2 - b * rhs1) / det
    return xdd, thdd


def _derivative(state: np.ndarray, force: float, half_len: float) -> np.ndarray:
    xdd, thdd = _accelerations(state, force, half_len)
    return np.array([state[1], xdd, state[3], thdd])


def rk4_step(state: np.ndarray, force: float, half_len: float, dt: float = DT) -> np.ndarray:
    k1 = _derivative(state, force, half_len)
    k2 = _derivative(state + 0.5 * dt * k1, force, half_len)
    k3 = _derivative(state + 0.5 * dt * k2, force, half_len)
    k4 = _derivative(state + dt * k3, force, half_len)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def total_energy(state: np.ndarray, half_len: float) -> float:
    """Kinetic plus potential energy; conserved by the passive dynamics."""
    _, xdot, th, thdot = state
    m, big_m, l = POLE_MASS, CART_MASS, half_len
    v_sq = xdot * xdot + 2.0 * l * thdot * xdot * np.cos(th) + l * l * thdot * thdot
    i_cm = m * l * l / 3.0
    kinetic = 0.5 * big_m * xdot * xdot + 0.5 * m * v_sq + 0.5 * i_cm * thdot * thdot
    potential = m * GRAVITY * l * np.cos(th)
    return float(kinetic + potential)


def wrap_angle(theta: float) -> float:
    return float((theta + np.pi) % (2.0 * np.pi) - np.pi)


def force_action_set(num_forces: int, max_force: float = MAX_FORCE) -> ActionSet:
    """i equally spaced forces; min/max land on +-max_force exactly."""
    if num_forces < 2:
        raise ValueError("need at least 2 force levels")
    return ActionSet(np.linspace(-max_force, max_force, num_forces)[:, None])


class CartPoleSwingUp(Environment):
    def __init__(self, num_forces: int, seed: int = 0, max_force: float = MAX_FORCE, dt: float = DT):
        self.num_forces = num_forces
        self.max_force = max_force
        self.dt = dt
        self._actions = force_action_set(num_forces, max_force)
        self._rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._state = np.zeros(4)
        self._half_len = POLE_HALF_LENGTH_RANGE[0]
        self._steps = 0
        self._done = True

    @property
    def observation_dim(self) -> int:
        return 6

    @property
    def action_set(self) -> ActionSet:
        return self._actions

    def _observe(self) -> np.ndarray:
        x, xdot, th, thdot = self._state
        return np.array([x, xdot, np.cos(th), np.sin(th), thdot, self._half_len])

    def reset(self) -> np.ndarray:
        lo, hi = POLE_HALF_LENGTH_RANGE
        self._half_len = float(self._rng.uniform(lo, hi))
        self._state = np.array(
            [
                self._rng.uniform(-0.1, 0.1),
                self._rng.uniform(-0.05, 0.05),
                np.pi + self._rng.uniform(-0.5, 0.5),  # hanging downward
                self._rng.uniform(-0.05, 0.05),
            ]
        )
        self._steps = 0
        self._done = False
        return self._observe()

    def step(self, action_id: int) -> EnvStep:
        if self._done:
            raise RuntimeError("episode truncated; call reset()")
        aid = int(action_id)
        if not 0 <= aid < self.num_forces:
            raise ValueError(f"invalid force action {aid}")
        force = float(self._actions.vectors[aid, 0])
        self._state = rk4_step(self._state, force, self._half_len, self.dt)
        self._steps += 1
        upright = abs(wrap_angle(self._state[2])) <= REWARD_ANGLE
        centered = abs(self._state[0]) <= REWARD_X
        reward = 1.0 if (upright and centered) else 0.0
        self._done = self._steps >= EPISODE_CAP
        return EnvStep(observation=self._observe(), reward=reward, terminal=self._done)
