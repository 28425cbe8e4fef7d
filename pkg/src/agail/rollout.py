"""Lockstep rollouts: many episode slots advanced together with batched network calls."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policy as pol
from .envs import Env


@dataclass
class Trajectory:
    """One episode: observations, actions and environment rewards aligned by timestep."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self):
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


def _empty_actions(env, n):
    if env.spec.discrete:
        return np.zeros(n, dtype=np.int64)
    return np.zeros((n, env.spec.action_dim))


def run_episodes(policy, env: Env, n_episodes: int, rng, greedy=False) -> list[Trajectory]:
    """Roll out ``n_episodes`` complete episodes (to termination or horizon)."""
    if n_episodes <= 0:
        return []
    horizon = env.spec.horizon
    raw = env.reset_batch(rng, n_episodes)
    obs_dim = env.spec.state_dim
    states = np.zeros((n_episodes, horizon, obs_dim))
    actions = [_empty_actions(env, horizon) for _ in range(n_episodes)]
    rewards = np.zeros((n_episodes, horizon))
    lengths = np.zeros(n_episodes, dtype=np.int64)
    alive = np.ones(n_episodes, dtype=bool)
    for t in range(horizon):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        obs = env.observe(raw[idx])
        a, _ = pol.act(policy, obs, rng, greedy=greedy)
        nxt, r, done = env.step_batch(raw[idx], a)
        states[idx, t] = obs
        rewards[idx, t] = r
        for j, i in enumerate(idx):
            actions[i][t] = a[j]
        lengths[idx] += 1
        raw[idx] = nxt
        alive[idx[done]] = False
    return [Trajectory(states[i, :lengths[i]].copy(), actions[i][:lengths[i]].copy(),
                       rewards[i, :lengths[i]].copy()) for i in range(n_episodes)]


@dataclass
class Segments:
    """Raw output of :func:`collect`, laid out slot-major (each slot's steps contiguous)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    terminal: np.ndarray
    segment_end: np.ndarray
    next_states: np.ndarray  # observation after each step (used to bootstrap truncations)
    episode_returns: list


def collect(policy, env: Env, n_steps: int, n_slots: int, rng) -> Segments:
    """Collect ``n_steps`` transitions using ``n_slots`` episode slots in lockstep.

    Each slot starts a fresh episode and resets whenever an episode terminates
    or reaches the horizon. The last step of every slot is a truncation.
    """
    n_slots = max(1, min(n_slots, n_steps))
    per_slot = [n_steps // n_slots + (1 if i < n_steps % n_slots else 0) for i in range(n_slots)]
    T = max(per_slot)
    obs_dim = env.spec.state_dim
    states = np.zeros((n_slots, T, obs_dim))
    next_states = np.zeros((n_slots, T, obs_dim))
    actions = np.zeros((n_slots, T) + (() if env.spec.discrete else (env.spec.action_dim,)),
                       dtype=np.int64 if env.spec.discrete else np.float64)
    rewards = np.zeros((n_slots, T))
    log_probs = np.zeros((n_slots, T))
    terminal = np.zeros((n_slots, T), dtype=bool)
    seg_end = np.zeros((n_slots, T), dtype=bool)
    raw = env.reset_batch(rng, n_slots)
    ep_len = np.zeros(n_slots, dtype=np.int64)
    ep_ret = np.zeros(n_slots)
    finished = []
    limit = np.array(per_slot)
    for t in range(T):
        idx = np.flatnonzero(limit > t)
        obs = env.observe(raw[idx])
        a, lp = pol.act(policy, obs, rng)
        nxt, r, done = env.step_batch(raw[idx], a)
        states[idx, t] = obs
        actions[idx, t] = a
        rewards[idx, t] = r
        log_probs[idx, t] = lp
        next_states[idx, t] = env.observe(nxt)
        ep_len[idx] += 1
        ep_ret[idx] += r
        timeout = ep_len[idx] >= env.spec.horizon
        ended = done | timeout
        terminal[idx, t] = done
        seg_end[idx, t] = ended | (limit[idx] == t + 1)
        raw[idx] = nxt
        for j in np.flatnonzero(ended):
            finished.append(float(ep_ret[idx[j]]))
        restart = idx[ended]
        if restart.size:
            raw[restart] = env.reset_batch(rng, restart.size)
            ep_len[restart] = 0
            ep_ret[restart] = 0.0

    def flat(x):
        return np.concatenate([x[i, :per_slot[i]] for i in range(n_slots)])

    return Segments(flat(states), flat(actions), flat(rewards), flat(log_probs),
                    flat(terminal), flat(seg_end), flat(next_states), finished)
