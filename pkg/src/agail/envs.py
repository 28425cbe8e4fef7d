"""Classic-control MDPs as pure functions of an explicit state.

Each environment is stateless: ``reset`` draws a state from the initial
distribution, ``step`` maps ``(state, action)`` to a :class:`StepResult`.
``step_batch`` does the same over a leading batch axis so that many episodes
can be advanced in lockstep. The episode horizon is enforced by the caller
(rollout code), so ``done`` only reports physical termination.

Networks never see the raw state; they see ``observe(state)``. For CartPole
and PointMass that is the identity, for Pendulum it is ``(cos, sin, rate)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Box:
    dim: int
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise InputError(f"Box needs low < high, got {self.low}, {self.high}")


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int  # observation size fed to networks
    action_space: Discrete | Box
    horizon: int
    gamma: float = 0.995

    def __post_init__(self):
        if self.horizon < 1:
            raise InputError("horizon must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise InputError("gamma must lie in (0, 1]")

    @property
    def discrete(self) -> bool:
        return isinstance(self.action_space, Discrete)

    @property
    def action_dim(self) -> int:
        """Width of an action when fed to a network (one-hot for discrete)."""
        a = self.action_space
        return a.n if isinstance(a, Discrete) else a.dim


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool


class Env:
    spec: EnvSpec

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return self.reset_batch(rng, 1)[0]

    def reset_batch(self, rng, n):
        raise NotImplementedError

    def step(self, state, action) -> StepResult:
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.raw_dim,):
            raise InputError(f"state must have shape ({self.raw_dim},), got {state.shape}")
        nxt, rew, done = self.step_batch(state[None], self._check_action(action)[None])
        return StepResult(nxt[0], float(rew[0]), bool(done[0]))

    def step_batch(self, states, actions):
        raise NotImplementedError

    def observe(self, states):
        return np.asarray(states, dtype=np.float64)

    def _check_action(self, action):
        space = self.spec.action_space
        if isinstance(space, Discrete):
            a = np.asarray(action)
            if a.ndim != 0 or not np.issubdtype(a.dtype, np.integer) or not 0 <= a < space.n:
                raise InputError(f"invalid discrete action {action!r} for {space}")
            return a.astype(np.int64)
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (space.dim,) or not np.all(np.isfinite(a)):
            raise InputError(f"invalid continuous action {action!r} for {space}")
        return a


class CartPole(Env):
    """Cart-pole balancing with the classic constants and explicit Euler steps."""

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half the pole length
    force_mag = 10.0
    tau = 0.02
    theta_limit = 12 * 2 * math.pi / 360
    x_limit = 2.4
    raw_dim = 4

    def __init__(self, horizon=200, gamma=0.995):
        self.spec = EnvSpec("cartpole", 4, Discrete(2), horizon, gamma)

    def reset_batch(self, rng, n):
        return rng.uniform(-0.05, 0.05, size=(n, 4))

    def step_batch(self, states, actions):
        x, x_dot, theta, theta_dot = np.asarray(states, dtype=np.float64).T
        force = np.where(np.asarray(actions) == 1, self.force_mag, -self.force_mag)
        total_mass = self.masspole + self.masscart
        polemass_length = self.masspole * self.length
        cos, sin = np.cos(theta), np.sin(theta)
        temp = (force + polemass_length * theta_dot ** 2 * sin) / total_mass
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos ** 2 / total_mass)
        )
        x_acc = temp - polemass_length * theta_acc * cos / total_mass
        nxt = np.stack([
            x + self.tau * x_dot,
            x_dot + self.tau * x_acc,
            theta + self.tau * theta_dot,
            theta_dot + self.tau * theta_acc,
        ], axis=1)
        done = (np.abs(nxt[:, 0]) > self.x_limit) | (np.abs(nxt[:, 2]) > self.theta_limit)
        return nxt, np.ones(len(nxt)), done


def wrap_angle(theta):
    return (np.asarray(theta) + np.pi) % (2 * np.pi) - np.pi


class Pendulum(Env):
    """Torque-limited pendulum swing-up; angle 0 is upright.

    State is ``(theta, theta_dot)``; semi-implicit Euler with dt 0.05.
    """

    max_speed = 8.0
    max_torque = 2.0
    dt = 0.05
    g = 10.0
    m = 1.0
    l = 1.0
    raw_dim = 2

    def __init__(self, horizon=200, gamma=0.995):
        self.spec = EnvSpec("pendulum", 3, Box(1, -self.max_torque, self.max_torque),
                            horizon, gamma)

    def reset_batch(self, rng, n):
        return np.stack([rng.uniform(-np.pi, np.pi, n), rng.uniform(-1.0, 1.0, n)], axis=1)

    def step_batch(self, states, actions):
        th, thdot = np.asarray(states, dtype=np.float64).T
        u = np.clip(np.asarray(actions, dtype=np.float64).reshape(len(th), -1)[:, 0],
                    -self.max_torque, self.max_torque)
        th_n = wrap_angle(th)
        reward = -(th_n ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)
        new_thdot = thdot + (3 * self.g / (2 * self.l) * np.sin(th)
                             + 3.0 / (self.m * self.l ** 2) * u) * self.dt
        new_thdot = np.clip(new_thdot, -self.max_speed, self.max_speed)
        new_th = wrap_angle(th + new_thdot * self.dt)
        return np.stack([new_th, new_thdot], axis=1), reward, np.zeros(len(th), dtype=bool)

    def observe(self, states):
        th, thdot = np.asarray(states, dtype=np.float64).T
        return np.stack([np.cos(th), np.sin(th), thdot], axis=-1)


class PointMass(Env):
    """2-D double integrator that should drive from the origin to a goal and stop.

    State ``(x, y, vx, vy)``; action is a force in ``[-1, 1]^2`` (clipped).
    """

    dt = 0.1
    raw_dim = 4

    def __init__(self, horizon=100, gamma=0.995, goal=(1.0, 1.0), origin=(0.0, 0.0)):
        self.goal = np.asarray(goal, dtype=np.float64)
        self.origin = np.asarray(origin, dtype=np.float64)
        self.spec = EnvSpec("pointmass", 4, Box(2, -1.0, 1.0), horizon, gamma)

    def reset_batch(self, rng, n):
        start = np.concatenate([self.origin, np.zeros(2)])
        return np.tile(start, (n, 1))

    def step_batch(self, states, actions):
        s = np.asarray(states, dtype=np.float64)
        u = np.clip(np.asarray(actions, dtype=np.float64).reshape(len(s), 2), -1.0, 1.0)
        pos, vel = s[:, :2], s[:, 2:]
        reward = -np.sum((pos - self.goal) ** 2, axis=1)
        vel = vel + self.dt * u
        pos = pos + self.dt * vel
        return np.concatenate([pos, vel], axis=1), reward, np.zeros(len(s), dtype=bool)


ENVIRONMENTS = {"cartpole": CartPole, "pendulum": Pendulum, "pointmass": PointMass}


def make_env(name: str, **kwargs) -> Env:
    try:
        return ENVIRONMENTS[name](**kwargs)
    except KeyError:
        raise ConfigError(
            f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}"
        ) from None


def true_return(rewards, gamma=1.0) -> float:
    """Discounted sum of a reward sequence (or of ``trajectory.rewards``)."""
    rewards = getattr(rewards, "rewards", rewards)
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise InputError("cannot take the return of an empty trajectory")
    return float(np.sum(r * gamma ** np.arange(r.size)))
