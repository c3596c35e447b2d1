"""Pendulum swing-up (Pendulum-v1 dynamics), written as pure functions over a small state.

Reward is ``-(theta^2 + 0.1*theta_dot^2 + 0.001*u^2)`` evaluated on the state
*before* integration, with ``u`` the clipped torque.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hierppo.errors import InputError

GRAVITY = 10.0
MASS = 1.0
LENGTH = 1.0
DT = 0.05
MAX_SPEED = 8.0
MAX_TORQUE = 2.0
MAX_STEPS = 200

OBS_DIM = 3
ACTION_DIM = 1

MIN_REWARD = -(math.pi ** 2 + 0.1 * MAX_SPEED ** 2 + 0.001 * MAX_TORQUE ** 2)
MIN_EPISODE_RETURN = MAX_STEPS * MIN_REWARD


@dataclass(frozen=True)
class PendulumState:
    theta: float
    theta_dot: float
    steps_elapsed: int = 0


@dataclass(frozen=True)
class Observation:
    cos_theta: float
    sin_theta: float
    theta_dot: float

    def as_array(self):
        return np.array([self.cos_theta, self.sin_theta, self.theta_dot])


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool


def angle_normalize(x):
    """Wrap an angle into [-pi, pi)."""
    return ((x + math.pi) % (2.0 * math.pi)) - math.pi


def observe(state):
    return Observation(math.cos(state.theta), math.sin(state.theta), state.theta_dot)


def reset(seed):
    """Sample a start state. ``seed`` is an int or a ``numpy.random.Generator``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta, theta_dot = rng.uniform(low=[-math.pi, -1.0], high=[math.pi, 1.0])
    state = PendulumState(float(theta), float(theta_dot), 0)
    return state, observe(state)


def step(state, torque):
    torque = float(np.asarray(torque, dtype=np.float64).reshape(-1)[0])
    if not math.isfinite(torque):
        raise InputError(f"non-finite torque {torque!r}")
    u = min(max(torque, -MAX_TORQUE), MAX_TORQUE)
    th, thdot = state.theta, state.theta_dot
    th_n = angle_normalize(th)
    reward = -(th_n * th_n + 0.1 * thdot * thdot + 0.001 * u * u)

    new_thdot = thdot + (3.0 * GRAVITY / (2.0 * LENGTH) * math.sin(th)
                         + 3.0 / (MASS * LENGTH ** 2) * u) * DT
    new_thdot = min(max(new_thdot, -MAX_SPEED), MAX_SPEED)
    new_th = angle_normalize(th + new_thdot * DT)
    steps = state.steps_elapsed + 1
    new_state = PendulumState(new_th, new_thdot, steps)
    return new_state, StepResult(observe(new_state), reward, steps >= MAX_STEPS)


class PendulumEnv:
    """Stateful wrapper that owns one environment's reset stream."""

    observation_dim = OBS_DIM
    action_dim = ACTION_DIM

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.state = None

    def reset(self):
        self.state, obs = reset(self.rng)
        return obs.as_array()

    def step(self, torque):
        self.state, result = step(self.state, torque)
        return result.observation.as_array(), result.reward, result.done
