"""Posterior network Q(a_E | a, s) that rewards policy actions predictive of the expert's.

Input is the state concatenated with the encoded policy action. Output is a
categorical over expert actions (discrete) or a diagonal Gaussian
``(mean, log_std)`` over expert actions (continuous).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .adversary import encode_actions
from .envs import EnvSpec
from .errors import InputError
from .policy import LOG_2PI, log_softmax

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


@dataclass
class Guide:
    spec: EnvSpec
    net: nc.Mlp
    adam: nc.AdamState = field(default_factory=nc.AdamState)


@dataclass
class QReport:
    nll_before: float
    nll_after: float


def make_guide(spec: EnvSpec, rng, hidden=nc.DEFAULT_HIDDEN, learning_rate=3e-4,
               output_scale=0.1) -> Guide:
    out_dim = spec.action_dim if spec.discrete else 2 * spec.action_dim
    net = nc.init_mlp((spec.state_dim + spec.action_dim,) + tuple(hidden) + (out_dim,), rng,
                      output_scale=output_scale)
    return Guide(spec, net, nc.AdamState(learning_rate=learning_rate))


def guide_inputs(guide: Guide, states, policy_actions) -> np.ndarray:
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    a = encode_actions(guide.spec, policy_actions)
    if s.shape[1] != guide.spec.state_dim or len(a) != len(s):
        raise InputError("guide states/actions do not line up")
    return np.concatenate([s, a], axis=1)


def _split(guide, out):
    k = guide.spec.action_dim
    mean, raw = out[:, :k], out[:, k:]
    return mean, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), raw


def log_q(guide: Guide, states, expert_actions, policy_actions) -> np.ndarray:
    """Per-row ``log Q(a_E | a, s)``."""
    out = nc.forward(guide.net, guide_inputs(guide, states, policy_actions))
    return _log_q_from(guide, out, expert_actions)


def _log_q_from(guide, out, expert_actions):
    if guide.spec.discrete:
        ae = np.asarray(expert_actions, dtype=np.int64).reshape(-1)
        return log_softmax(out)[np.arange(len(out)), ae]
    mean, log_std, _ = _split(guide, out)
    ae = np.asarray(expert_actions, dtype=np.float64).reshape(mean.shape)
    z = (ae - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=1)


def nll(guide: Guide, states, expert_actions, policy_actions) -> float:
    return float(-np.mean(log_q(guide, states, expert_actions, policy_actions)))


def nll_grad(guide: Guide, states, expert_actions, policy_actions) -> np.ndarray:
    """Flat gradient of the mean negative log-likelihood w.r.t. the guide weights."""
    cache = nc.forward_cache(guide.net, guide_inputs(guide, states, policy_actions))
    out = cache.out
    n = len(out)
    if guide.spec.discrete:
        ae = np.asarray(expert_actions, dtype=np.int64).reshape(-1)
        g = np.exp(log_softmax(out))
        g[np.arange(n), ae] -= 1.0
    else:
        mean, log_std, raw = _split(guide, out)
        ae = np.asarray(expert_actions, dtype=np.float64).reshape(mean.shape)
        inv_var = np.exp(-2 * log_std)
        diff = ae - mean
        g_std = 1.0 - diff * diff * inv_var
        g_std[(raw < LOG_STD_MIN) | (raw > LOG_STD_MAX)] = 0.0
        g = np.concatenate([-diff * inv_var, g_std], axis=1)
    grads, _ = nc.backward(guide.net, None, g / n, cache=cache)
    return nc.flatten_grads(grads)


def q_update(guide: Guide, states, expert_actions, policy_actions) -> QReport | None:
    """One Adam step on the NLL of demonstrated actions. Empty batch: no-op, returns None."""
    if len(states) == 0:
        return None
    before = nll(guide, states, expert_actions, policy_actions)
    params, _ = nc.adam_step(nc.flatten_params(guide.net),
                             nll_grad(guide, states, expert_actions, policy_actions), guide.adam)
    nc.set_flat_params(guide.net, params)
    return QReport(before, nll(guide, states, expert_actions, policy_actions))


def q_reward(guide: Guide, expert_actions, policy_actions, states):
    """Bounded guidance reward in (0, 1].

    Discrete: posterior mass on the expert action. Continuous: Gaussian density
    at the expert action divided by the density at the mode.
    """
    single = np.asarray(states).ndim == 1
    if single:
        states = np.asarray(states)[None]
        expert_actions, policy_actions = [expert_actions], [policy_actions]
    out = nc.forward(guide.net, guide_inputs(guide, states, policy_actions))
    if guide.spec.discrete:
        r = np.exp(_log_q_from(guide, out, expert_actions))
    else:
        mean, log_std, _ = _split(guide, out)
        ae = np.asarray(expert_actions, dtype=np.float64).reshape(mean.shape)
        z = (ae - mean) * np.exp(-log_std)
        r = np.exp(-0.5 * np.sum(z * z, axis=1))
    return float(r[0]) if single else r


def marginal_entropy(spec: EnvSpec, expert_actions) -> float:
    """Plug-in entropy of demonstrated actions (Gaussian fit for continuous actions)."""
    if spec.discrete:
        counts = np.bincount(np.asarray(expert_actions, dtype=np.int64).reshape(-1),
                             minlength=spec.action_dim)
        p = counts[counts > 0] / counts.sum()
        return float(-np.sum(p * np.log(p)))
    a = np.asarray(expert_actions, dtype=np.float64).reshape(-1, spec.action_dim)
    var = np.maximum(a.var(axis=0), 1e-12)
    return float(np.sum(0.5 * np.log(2 * np.pi * np.e * var)))


def lower_bound_estimate(guide: Guide, states, expert_actions, policy_actions,
                         action_entropy=None) -> float:
    """Estimate of ``E[log Q(a_E | a, s)] + H(a_E)`` on an evaluation batch."""
    if len(states) == 0:
        raise InputError("lower bound needs a non-empty evaluation batch")
    if action_entropy is None:
        action_entropy = marginal_entropy(guide.spec, expert_actions)
    return float(np.mean(log_q(guide, states, expert_actions, policy_actions)) + action_entropy)
