"""Discriminator D(s) / D(s, a), trained as the probability that an input came from the expert.

Labels are expert = 1 and policy = 0, so ``expert_prob`` doubles as a reward
the policy should maximize.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .envs import EnvSpec
from .errors import InputError

STATE_ONLY = "state"
STATE_ACTION = "state_action"


@dataclass
class Discriminator:
    spec: EnvSpec
    net: nc.Mlp
    mode: str = STATE_ONLY
    adam: nc.AdamState = field(default_factory=nc.AdamState)

    @property
    def input_dim(self) -> int:
        return self.net.input_dim


@dataclass
class DReport:
    loss_before: float
    loss_after: float


def make_discriminator(spec: EnvSpec, rng, mode=STATE_ONLY, hidden=nc.DEFAULT_HIDDEN,
                       learning_rate=3e-4, output_scale=0.1) -> Discriminator:
    if mode not in (STATE_ONLY, STATE_ACTION):
        raise InputError(f"unknown discriminator mode {mode!r}")
    in_dim = spec.state_dim + (spec.action_dim if mode == STATE_ACTION else 0)
    net = nc.init_mlp((in_dim,) + tuple(hidden) + (1,), rng, output_scale=output_scale)
    return Discriminator(spec, net, mode, nc.AdamState(learning_rate=learning_rate))


def encode_actions(spec: EnvSpec, actions) -> np.ndarray:
    """Network encoding of a batch of actions: one-hot for discrete, raw otherwise."""
    if spec.discrete:
        a = np.asarray(actions, dtype=np.int64).reshape(-1)
        if np.any((a < 0) | (a >= spec.action_dim)):
            raise InputError("discrete action out of range")
        return np.eye(spec.action_dim)[a]
    return np.asarray(actions, dtype=np.float64).reshape(-1, spec.action_dim)


def disc_inputs(d: Discriminator, states, actions=None) -> np.ndarray:
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if s.shape[1] != d.spec.state_dim:
        raise InputError(f"state width {s.shape[1]} != {d.spec.state_dim}")
    if d.mode == STATE_ONLY:
        return s
    if actions is None:
        raise InputError("a state-action discriminator needs actions")
    a = encode_actions(d.spec, actions)
    if len(a) != len(s):
        raise InputError("states and actions differ in length")
    return np.concatenate([s, a], axis=1)


def _logits(d, x):
    return nc.forward(d.net, x)[:, 0]


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def expert_prob(d: Discriminator, s, a=None):
    """Probability that ``s`` (or ``(s, a)``) came from the expert. Scalar in, scalar out."""
    single = np.asarray(s).ndim == 1
    if single and a is not None and d.spec.discrete:
        a = [a]
    p = sigmoid(_logits(d, disc_inputs(d, s, a)))
    return float(p[0]) if single else p


def disc_reward(d: Discriminator, states, actions=None, kind="prob"):
    """Reward from the discriminator: ``D`` itself, or ``-log(1 - D)``."""
    z = _logits(d, disc_inputs(d, states, actions))
    if kind == "prob":
        return sigmoid(z)
    if kind == "neg_log_one_minus":
        return np.logaddexp(0.0, z)  # -log(1 - sigmoid(z))
    raise InputError(f"unknown discriminator reward {kind!r}")


def bce_loss(d: Discriminator, policy_x, expert_x) -> float:
    """Mean binary cross-entropy over both batches (expert = 1, policy = 0)."""
    zp, ze = _logits(d, policy_x), _logits(d, expert_x)
    total = np.sum(np.logaddexp(0.0, zp)) + np.sum(np.logaddexp(0.0, -ze))
    return float(total / (len(zp) + len(ze)))


def bce_grad(d: Discriminator, policy_x, expert_x) -> np.ndarray:
    x = np.concatenate([policy_x, expert_x])
    labels = np.concatenate([np.zeros(len(policy_x)), np.ones(len(expert_x))])
    cache = nc.forward_cache(d.net, x)
    dz = (sigmoid(cache.out[:, 0]) - labels) / len(x)
    grads, _ = nc.backward(d.net, None, dz[:, None], cache=cache)
    return nc.flatten_grads(grads)


def d_update(d: Discriminator, policy_states, expert_states,
             policy_actions=None, expert_actions=None) -> DReport:
    """One Adam step on the BCE loss; returns the loss before and after the step."""
    if len(policy_states) == 0 or len(expert_states) == 0:
        raise InputError("d_update needs non-empty policy and expert batches")
    px = disc_inputs(d, policy_states, policy_actions)
    ex = disc_inputs(d, expert_states, expert_actions)
    before = bce_loss(d, px, ex)
    params, _ = nc.adam_step(nc.flatten_params(d.net), bce_grad(d, px, ex), d.adam)
    nc.set_flat_params(d.net, params)
    return DReport(before, bce_loss(d, px, ex))


def bayes_optimal_check(nu_pi, nu_expert) -> np.ndarray:
    """Optimal discriminator ``nu_E / (nu_E + nu_pi)`` on a finite state set.

    States with no mass under either table come back as NaN (nothing to compare).
    """
    nu_pi = np.asarray(nu_pi, dtype=np.float64)
    nu_e = np.asarray(nu_expert, dtype=np.float64)
    if nu_pi.shape != nu_e.shape:
        raise InputError("visitation tables must have the same shape")
    if np.any(nu_pi < 0) or np.any(nu_e < 0):
        raise InputError("visitation tables must be non-negative")
    total = nu_pi + nu_e
    out = np.full(total.shape, np.nan)
    np.divide(nu_e, total, out=out, where=total > 0)
    return out
