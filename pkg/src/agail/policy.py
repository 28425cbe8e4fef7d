"""Stochastic policy (the generator) with a value head on a shared trunk.

The trunk is a Tanh MLP; on top of it sit a linear policy head (categorical
logits, or a Gaussian mean with a state-independent log-std vector) and a
linear value head. The TRPO parameter vector covers trunk, policy head and
log-std; the value head is fit separately by regression.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .envs import EnvSpec
from .errors import InputError, ParseError

LOG_2PI = np.log(2 * np.pi)


@dataclass
class StochasticPolicy:
    spec: EnvSpec
    trunk: nc.Mlp
    policy_head: nc.Mlp
    value_head: nc.Mlp
    log_std: np.ndarray | None = None  # continuous only
    value_adam: nc.AdamState = field(default_factory=nc.AdamState)

    @property
    def discrete(self) -> bool:
        return self.spec.discrete

    def copy(self) -> "StochasticPolicy":
        return StochasticPolicy(
            self.spec, self.trunk.copy(), self.policy_head.copy(), self.value_head.copy(),
            None if self.log_std is None else self.log_std.copy(),
            copy.deepcopy(self.value_adam),
        )


def make_policy(spec: EnvSpec, rng, hidden=nc.DEFAULT_HIDDEN, head_scale=0.01,
                value_lr=1e-3) -> StochasticPolicy:
    """Fresh policy. ``head_scale`` shrinks the policy head so the initial policy is near uniform."""
    hidden = tuple(hidden)
    trunk = nc.init_mlp((spec.state_dim,) + hidden, rng, output_activation="tanh")
    out_dim = spec.action_dim
    policy_head = nc.init_mlp((hidden[-1], out_dim), rng, output_scale=head_scale)
    value_head = nc.init_mlp((hidden[-1], 1), rng)
    log_std = None if spec.discrete else np.zeros(out_dim)
    return StochasticPolicy(spec, trunk, policy_head, value_head, log_std,
                            nc.AdamState(learning_rate=value_lr))


# ---------------------------------------------------------------- parameters


def get_params(policy: StochasticPolicy) -> np.ndarray:
    parts = [nc.flatten_params(policy.trunk), nc.flatten_params(policy.policy_head)]
    if policy.log_std is not None:
        parts.append(policy.log_std)
    return np.concatenate(parts)


def set_params(policy: StochasticPolicy, flat) -> None:
    flat = np.asarray(flat, dtype=np.float64)
    n_trunk, n_head = policy.trunk.num_params, policy.policy_head.num_params
    n_std = 0 if policy.log_std is None else policy.log_std.size
    if flat.size != n_trunk + n_head + n_std:
        raise InputError("flat policy parameter vector has the wrong length")
    nc.set_flat_params(policy.trunk, flat[:n_trunk])
    nc.set_flat_params(policy.policy_head, flat[n_trunk:n_trunk + n_head])
    if n_std:
        policy.log_std = flat[n_trunk + n_head:].copy()


# ---------------------------------------------------------------- distribution


@dataclass
class DistCache:
    trunk: tuple
    head: tuple

    @property
    def out(self):
        return self.head.out  # logits or mean, (n, k)


def _states(policy, s):
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    s = s[None] if single else s
    if s.shape[1] != policy.spec.state_dim:
        raise InputError(f"state width {s.shape[1]} != state_dim {policy.spec.state_dim}")
    return s, single


def dist_forward(policy: StochasticPolicy, states) -> DistCache:
    states, _ = _states(policy, states)
    trunk_cache = nc.forward_cache(policy.trunk, states)
    head_cache = nc.forward_cache(policy.policy_head, trunk_cache.out)
    return DistCache(trunk_cache, head_cache)


def dist_backward(policy, cache: DistCache, grad_out, grad_log_std=None) -> np.ndarray:
    """Flat gradient of ``<grad_out, head output> + <grad_log_std, log_std>``."""
    head_grads, g_feat = nc.backward(policy.policy_head, None, grad_out, cache=cache.head)
    trunk_grads, _ = nc.backward(policy.trunk, None, g_feat, cache=cache.trunk)
    parts = [nc.flatten_grads(trunk_grads), nc.flatten_grads(head_grads)]
    if policy.log_std is not None:
        parts.append(np.zeros_like(policy.log_std) if grad_log_std is None else grad_log_std)
    return np.concatenate(parts)


def dist_jvp(policy, cache: DistCache, direction):
    """Tangent of (head output, log_std) along a flat parameter direction."""
    n_trunk, n_head = policy.trunk.num_params, policy.policy_head.num_params
    d_feat = nc.jvp(policy.trunk, None, direction[:n_trunk], cache=cache.trunk)
    d_out = nc.jvp(policy.policy_head, None, direction[n_trunk:n_trunk + n_head],
                   cache=cache.head, input_tangent=d_feat)
    d_std = None if policy.log_std is None else direction[n_trunk + n_head:]
    return d_out, d_std


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _log_prob_from(policy, out, actions):
    if policy.discrete:
        a = np.asarray(actions, dtype=np.int64).reshape(-1)
        return log_softmax(out)[np.arange(len(out)), a]
    a = np.asarray(actions, dtype=np.float64).reshape(out.shape)
    std = np.exp(policy.log_std)
    z = (a - out) / std
    return np.sum(-0.5 * z * z - policy.log_std - 0.5 * LOG_2PI, axis=1)


def log_prob_grad(policy, cache: DistCache, actions, weights) -> np.ndarray:
    """Flat gradient of ``sum_i weights_i * log pi(a_i | s_i)``."""
    out = cache.out
    w = np.asarray(weights, dtype=np.float64)[:, None]
    if policy.discrete:
        a = np.asarray(actions, dtype=np.int64).reshape(-1)
        g = -np.exp(log_softmax(out))
        g[np.arange(len(out)), a] += 1.0
        return dist_backward(policy, cache, w * g)
    a = np.asarray(actions, dtype=np.float64).reshape(out.shape)
    var = np.exp(2 * policy.log_std)
    diff = a - out
    g_mean = w * diff / var
    g_std = np.sum(w * (diff * diff / var - 1.0), axis=0)
    return dist_backward(policy, cache, g_mean, g_std)


def log_prob(policy: StochasticPolicy, s, a):
    s, single = _states(policy, s)
    lp = _log_prob_from(policy, dist_forward(policy, s).out, np.asarray(a) if not single else [a])
    return float(lp[0]) if single else lp


def _entropy_from(policy, out):
    if policy.discrete:
        lp = log_softmax(out)
        return -np.sum(np.exp(lp) * lp, axis=1)
    return np.full(len(out), np.sum(policy.log_std + 0.5 * (LOG_2PI + 1.0)))


def entropy(policy: StochasticPolicy, s):
    s, single = _states(policy, s)
    h = _entropy_from(policy, dist_forward(policy, s).out)
    return float(h[0]) if single else h


def kl_from(policy_old, out_old, policy_new, out_new):
    """Per-row KL(old || new) given head outputs."""
    if policy_old.discrete:
        lp_old, lp_new = log_softmax(out_old), log_softmax(out_new)
        return np.sum(np.exp(lp_old) * (lp_old - lp_new), axis=1)
    ls_o, ls_n = policy_old.log_std, policy_new.log_std
    var_o, var_n = np.exp(2 * ls_o), np.exp(2 * ls_n)
    return np.sum(ls_n - ls_o + (var_o + (out_old - out_new) ** 2) / (2 * var_n) - 0.5, axis=1)


def kl(policy_old: StochasticPolicy, policy_new: StochasticPolicy, s):
    s, single = _states(policy_old, s)
    d = kl_from(policy_old, dist_forward(policy_old, s).out,
                policy_new, dist_forward(policy_new, s).out)
    return float(d[0]) if single else d


def sample_from(policy, out, rng):
    if policy.discrete:
        p = np.exp(log_softmax(out))
        u = rng.random(len(out))
        a = (p.cumsum(axis=1) < u[:, None]).sum(axis=1)
        return np.minimum(a, p.shape[1] - 1)
    return out + np.exp(policy.log_std) * rng.standard_normal(out.shape)


def act(policy: StochasticPolicy, s, rng, greedy=False):
    """Sample an action; returns ``(action, log_prob)``. Works on one state or a batch."""
    s, single = _states(policy, s)
    out = dist_forward(policy, s).out
    if greedy:
        a = out.argmax(axis=1) if policy.discrete else out.copy()
    else:
        a = sample_from(policy, out, rng)
    lp = _log_prob_from(policy, out, a)
    if single:
        return (int(a[0]) if policy.discrete else a[0]), float(lp[0])
    return a, lp


# ---------------------------------------------------------------- value head


def value(policy: StochasticPolicy, s):
    s, single = _states(policy, s)
    feats = nc.forward(policy.trunk, s)
    v = nc.forward(policy.value_head, feats)[:, 0]
    return float(v[0]) if single else v


def _value_head_grad(policy, feats, targets):
    cache = nc.forward_cache(policy.value_head, feats)
    err = cache.out[:, 0] - targets
    grads, _ = nc.backward(policy.value_head, None, (err / len(targets))[:, None], cache=cache)
    return nc.flatten_grads(grads)


def value_loss(policy: StochasticPolicy, states, targets) -> float:
    """Half mean squared error of the value head."""
    resid = value(policy, states) - np.asarray(targets, dtype=np.float64)
    return float(0.5 * np.mean(resid ** 2))


def value_grad(policy: StochasticPolicy, states, targets) -> np.ndarray:
    """Gradient of :func:`value_loss` w.r.t. the value-head weights (trunk held fixed)."""
    s, _ = _states(policy, states)
    return _value_head_grad(policy, nc.forward(policy.trunk, s),
                            np.asarray(targets, dtype=np.float64))


def fit_value(policy: StochasticPolicy, states, targets, rng, epochs=5, batch_size=256):
    """Regress the value head onto ``targets`` with Adam; returns the final mean squared error.

    The trunk is treated as a fixed shared feature map here: moving it would
    shift the policy outside the trust region TRPO just enforced.
    """
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    feats = nc.forward(policy.trunk, states)
    n = len(states)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            params, _ = nc.adam_step(nc.flatten_params(policy.value_head),
                                     _value_head_grad(policy, feats[idx], targets[idx]),
                                     policy.value_adam)
            nc.set_flat_params(policy.value_head, params)
    resid = nc.forward(policy.value_head, feats)[:, 0] - targets
    return float(np.mean(resid ** 2))


# ---------------------------------------------------------------- rollout batches


@dataclass
class RolloutBatch:
    """Concatenated episode segments from one iteration.

    ``terminal[t]`` marks a physical termination (no bootstrap); ``segment_end[t]``
    marks any segment boundary, and ``bootstrap[t]`` is V(s_{t+1}) at a boundary
    that was a truncation (horizon or end of the sampling budget).
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    true_rewards: np.ndarray
    old_log_probs: np.ndarray
    values: np.ndarray
    terminal: np.ndarray
    segment_end: np.ndarray
    bootstrap: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: list = field(default_factory=list)  # completed episodes only

    def __len__(self):
        return len(self.rewards)


def gae(batch: RolloutBatch, gamma: float, lam: float):
    """Generalized advantage estimates and lambda-returns."""
    r, v = batch.rewards, batch.values
    n = len(r)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if batch.segment_end[t]:
            next_value = 0.0 if batch.terminal[t] else batch.bootstrap[t]
            running = 0.0
        else:
            next_value = v[t + 1]
        delta = r[t] + gamma * next_value - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + v


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    std = adv.std()
    if std < 1e-12:
        return adv - adv.mean()
    return (adv - adv.mean()) / std


# ---------------------------------------------------------------- checkpoints


def dump_policy(policy: StochasticPolicy, header: str = "") -> str:
    lines = [f"AGAIL-POLICY v1 {header}".rstrip(),
             f"env {policy.spec.name} state_dim {policy.spec.state_dim} "
             f"action_dim {policy.spec.action_dim} discrete {int(policy.discrete)}"]
    for net in (policy.trunk, policy.policy_head, policy.value_head):
        lines.extend(nc.dump_mlp(net))
    if policy.log_std is not None:
        lines.append("log_std " + nc._fmt(policy.log_std))
    return "\n".join(lines) + "\n"


def checkpoint_env(text: str) -> str:
    """Environment name recorded in a checkpoint, read without building the networks."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("AGAIL-POLICY v1"):
        raise ParseError("missing AGAIL-POLICY v1 header", line=1)
    info = lines[1].split() if len(lines) > 1 else []
    if len(info) < 2 or info[0] != "env":
        raise ParseError("missing env line", line=2)
    return info[1]


def parse_policy(text: str, spec: EnvSpec) -> StochasticPolicy:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("AGAIL-POLICY v1"):
        raise ParseError("missing AGAIL-POLICY v1 header", line=1)
    if len(lines) < 2:
        raise ParseError("truncated checkpoint", line=2)
    info = lines[1].split()
    if len(info) != 8 or info[0] != "env":
        raise ParseError(f"bad checkpoint description {lines[1]!r}", line=2)
    if info[1] != spec.name:
        raise ParseError(f"checkpoint is for env {info[1]!r}, not {spec.name!r}", line=2)
    i = 2
    nets = []
    for _ in range(3):
        net, i = nc.parse_mlp(lines, i)
        nets.append(net)
    log_std = None
    if not spec.discrete:
        if i >= len(lines) or not lines[i].startswith("log_std"):
            raise ParseError("missing log_std line", line=i + 1)
        log_std = nc._floats(lines[i][len("log_std"):], spec.action_dim, i + 1)
    policy = StochasticPolicy(spec, nets[0], nets[1], nets[2], log_std)
    if nets[0].input_dim != spec.state_dim or nets[1].output_dim != spec.action_dim:
        raise ParseError("checkpoint network shape does not match environment", line=3)
    return policy
