"""Expert demonstrations with partially masked action sequences.

File format (UTF-8)::

    AGAIL-DEMOS v1 env=<name> eta=<float> seed=<int>
    {"states": [[...], ...], "actions": [a0, null, a2, ...], "rewards": [...]}
    ...

One JSON record per trajectory line; a masked action is ``null``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import ENVIRONMENTS, Env, EnvSpec, make_env
from .errors import ConfigError, InputError, ParseError
from .rollout import Trajectory, run_episodes

HEADER_RE = re.compile(r"^AGAIL-DEMOS v1 env=(\S+) eta=(\S+) seed=(-?\d+)$")
MISSING_DISCRETE = -1


@dataclass
class DemoTrajectory:
    """States of one demonstration plus its action slots and availability flags.

    Masked slots hold ``-1`` (discrete) or NaN (continuous) in ``actions``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    available: np.ndarray

    def __len__(self):
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return int(self.available.sum())

    def same_as(self, other: "DemoTrajectory") -> bool:
        a1, a2 = self.actions[self.available], other.actions[other.available]
        return (np.array_equal(self.states, other.states)
                and np.array_equal(self.rewards, other.rewards)
                and np.array_equal(self.available, other.available)
                and np.array_equal(a1, a2)
                and self.actions.dtype == other.actions.dtype)


@dataclass
class IncompleteDemoSet:
    env: str
    eta: float
    source_seed: int
    trajectories: list[DemoTrajectory] = field(default_factory=list)
    discrete: bool = True

    def __len__(self):
        return len(self.trajectories)

    @property
    def n_states(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def n_actions(self) -> int:
        return sum(t.n_actions for t in self.trajectories)

    def same_as(self, other: "IncompleteDemoSet") -> bool:
        return (self.env == other.env and self.eta == other.eta
                and self.source_seed == other.source_seed
                and len(self) == len(other)
                and all(a.same_as(b) for a, b in zip(self.trajectories, other.trajectories)))

    def all_states(self) -> np.ndarray:
        return np.concatenate([t.states for t in self.trajectories])

    def action_pairs(self):
        """All (state, action) pairs whose action survived masking."""
        states = [t.states[t.available] for t in self.trajectories]
        actions = [t.actions[t.available] for t in self.trajectories]
        if not states:
            return np.zeros((0, 0)), np.zeros(0)
        return np.concatenate(states), np.concatenate(actions)


def record(policy, env: Env, n_episodes: int, seed: int, greedy=False) -> list[Trajectory]:
    """Roll out the (stochastic) expert policy; deterministic for a given seed."""
    return run_episodes(policy, env, n_episodes, np.random.default_rng(seed), greedy=greedy)


def surviving_count(eta: float, n: int) -> int:
    """Number of actions kept: round((1 - eta) * n), ties rounded half to even."""
    return int(round((1.0 - eta) * n))


def mask(trajectories, eta: float, seed: int, env: str = "", discrete: bool | None = None
         ) -> IncompleteDemoSet:
    """Keep a uniformly random subset of exactly ``round((1-eta) n)`` actions per trajectory."""
    if not 0.0 <= eta <= 1.0:
        raise InputError(f"eta must lie in [0, 1], got {eta}")
    rng = np.random.default_rng(seed)
    out = []
    for traj in trajectories:
        n = len(traj.states)
        actions = np.asarray(traj.actions)
        is_discrete = np.issubdtype(actions.dtype, np.integer) if discrete is None else discrete
        keep = np.zeros(n, dtype=bool)
        keep[rng.choice(n, size=surviving_count(eta, n), replace=False)] = True
        if is_discrete:
            slots = np.where(keep, actions.astype(np.int64), MISSING_DISCRETE)
        else:
            slots = actions.astype(np.float64).reshape(n, -1).copy()
            slots[~keep] = np.nan
        out.append(DemoTrajectory(np.asarray(traj.states, dtype=np.float64).copy(), slots,
                                  np.asarray(traj.rewards, dtype=np.float64).copy(), keep))
    if discrete is None:
        discrete = all(np.issubdtype(t.actions.dtype, np.integer) for t in out) if out else True
    return IncompleteDemoSet(env, float(eta), int(seed), out, discrete)


# ---------------------------------------------------------------- persistence


def _action_token(value, discrete):
    if discrete:
        return int(value)
    return [float(v) for v in value]


def save(demoset: IncompleteDemoSet, path) -> None:
    lines = [f"AGAIL-DEMOS v1 env={demoset.env or 'unknown'} eta={demoset.eta!r} "
             f"seed={demoset.source_seed}"]
    for t in demoset.trajectories:
        acts = [_action_token(a, demoset.discrete) if ok else None
                for a, ok in zip(t.actions, t.available)]
        rec = {"states": t.states.tolist(), "actions": acts, "rewards": t.rewards.tolist()}
        lines.append(json.dumps(rec, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_record(text, discrete, width=None):
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid trajectory record at column {exc.colno}: {exc.msg}") from None
    if not isinstance(rec, dict) or set(rec) != {"states", "actions", "rewards"}:
        raise ValueError("trajectory record needs exactly states/actions/rewards")
    try:
        states = np.asarray(rec["states"], dtype=np.float64)
        rewards = np.asarray(rec["rewards"], dtype=np.float64)
    except (TypeError, ValueError):
        raise ValueError("non-numeric states or rewards") from None
    acts = rec["actions"]
    n = len(states)
    if states.ndim != 2 or rewards.shape != (n,) or not isinstance(acts, list) or len(acts) != n:
        raise ValueError("states, actions and rewards must align")
    available = np.array([a is not None for a in acts], dtype=bool)
    present = [a for a in acts if a is not None]
    if discrete is None:
        discrete = all(isinstance(a, int) for a in present) if present else True
    try:
        if discrete:
            slots = np.array([MISSING_DISCRETE if a is None else int(a) for a in acts],
                             dtype=np.int64)
        else:
            if width is None:
                width = len(present[0]) if present else 1
            slots = np.full((n, width), np.nan)
            for i, a in enumerate(acts):
                if a is not None:
                    slots[i] = a
    except (TypeError, ValueError):
        raise ValueError("malformed action slot") from None
    return DemoTrajectory(states, slots, rewards, available), discrete


def load(path) -> IncompleteDemoSet:
    text = Path(path).read_text(encoding="utf-8")
    if not text.endswith("\n"):
        raise ParseError("file is truncated (no final newline)", path=path,
                         line=text.count("\n") + 1)
    lines = text.split("\n")[:-1]
    if not lines:
        raise ParseError("empty file", path=path, line=1)
    m = HEADER_RE.match(lines[0])
    if not m:
        raise ParseError(f"bad header {lines[0]!r}", path=path, line=1)
    try:
        eta = float(m.group(2))
    except ValueError:
        raise ParseError("eta is not a number", path=path, line=1) from None
    discrete, width = None, None
    if m.group(1) in ENVIRONMENTS:
        spec = make_env(m.group(1)).spec
        discrete, width = spec.discrete, (None if spec.discrete else spec.action_dim)
    trajs = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            traj, discrete = _parse_record(line, discrete, width)
        except ValueError as exc:
            raise ParseError(str(exc), path=path, line=i) from None
        trajs.append(traj)
    return IncompleteDemoSet(m.group(1), eta, int(m.group(3)), trajs,
                             True if discrete is None else discrete)


# ---------------------------------------------------------------- sampling


def sample_expert_states(demoset: IncompleteDemoSet, batch_size: int, rng) -> np.ndarray:
    """Uniform with-replacement sample over every demonstrated state."""
    if demoset.n_states == 0:
        raise InputError("cannot sample states from an empty demonstration set")
    states = demoset.all_states()
    return states[rng.integers(0, len(states), size=batch_size)]


def sample_expert_action_pairs(demoset: IncompleteDemoSet, batch_size: int, rng):
    """Uniform sample of (state, action) pairs among surviving actions.

    Returns ``None`` when no action survived masking (the guide update is skipped).
    """
    states, actions = demoset.action_pairs()
    if len(actions) == 0:
        return None
    idx = rng.integers(0, len(actions), size=batch_size)
    return states[idx], actions[idx]


def check_compatible(demoset: IncompleteDemoSet, spec: EnvSpec) -> None:
    if demoset.env not in ("", "unknown", spec.name):
        raise ConfigError(f"demonstrations are for {demoset.env!r}, not {spec.name!r}")
    for t in demoset.trajectories:
        if t.states.shape[1] != spec.state_dim:
            raise ConfigError("demonstration state width does not match the environment")
        if demoset.discrete != spec.discrete:
            raise ConfigError("demonstration action type does not match the environment")
