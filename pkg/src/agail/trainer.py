"""Training loops: AGAIL, its baselines (TRPO on true reward, GAIL, state-only GAIL, BC), evaluation.

Every run is deterministic given ``TrainConfig.seed``. Independent random
streams are spawned per component (initialization, rollouts, discriminator
batches, guide batches, reward sampling) so that switching a component off
does not shift the randomness seen by the others.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import adversary as adv
from . import demos as dm
from . import guide as gd
from . import numcore as nc
from . import policy as pol
from .envs import Env, make_env
from .errors import ConfigError, NumericalError, ParseError, TrainingError
from .rollout import collect, run_episodes
from .trpo import StepReport, TrpoConfig, trpo_update

log = logging.getLogger(__name__)

ALGORITHMS = ("agail", "gail", "state_gail", "trpo", "bc")
DEFAULT_BUDGET = {"cartpole": 4000, "pendulum": 8000, "pointmass": 4000}
CSV_FIELDS = ("iter", "true_return", "composed_reward", "d_bce", "q_nll", "kl", "entropy",
              "seconds")
STREAMS = ("policy_init", "disc_init", "guide_init", "rollout", "disc", "guide", "reward",
           "value")


@dataclass
class TrainConfig:
    algorithm: str = "agail"
    env: str = "cartpole"
    eta: float = 0.0
    alpha: float = 1.0
    beta: float | None = None  # None -> 1 - eta
    lambda1: float = 0.0  # causal-entropy bonus
    lambda2: float = 1.0  # multiplies the guide reward on top of beta
    gamma: float = 0.995
    gae_lambda: float = 0.97
    timesteps: int | None = None  # per iteration; None -> DEFAULT_BUDGET[env]
    n_slots: int | None = None  # parallel episode slots; None -> timesteps // horizon
    iterations: int = 300
    seed: int = 0
    demos: str | None = None
    hidden: tuple = nc.DEFAULT_HIDDEN
    policy_head_scale: float = 0.01
    value_lr: float = 1e-3
    value_epochs: int = 5
    value_batch: int = 256
    d_lr: float = 3e-4
    d_steps: int = 1
    d_batch: int | None = None  # None -> full rollout size
    d_reward: str = "prob"  # or "neg_log_one_minus"
    q_lr: float = 3e-4
    q_steps: int = 1
    q_batch: int = 256
    bc_lr: float = 1e-3
    bc_batch: int = 64
    bc_eval_episodes: int = 5
    record_time: bool = False
    checkpoint_every: int = 0
    out_dir: str | None = None
    trpo: TrpoConfig = field(default_factory=TrpoConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.alpha < 0 or self.effective_beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if isinstance(self.trpo, dict):
            self.trpo = TrpoConfig(**self.trpo)
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def effective_beta(self) -> float:
        return 1.0 - self.eta if self.beta is None else self.beta

    @property
    def budget(self) -> int:
        return self.timesteps or DEFAULT_BUDGET.get(self.env, 4000)


@dataclass
class IterationMetrics:
    iter: int
    true_return: float
    composed_reward: float
    d_bce: float
    q_nll: float
    kl: float
    entropy: float
    seconds: float
    accepted: bool = True
    bc_loss: float = math.nan

    def row(self) -> list[str]:
        return [str(self.iter)] + [repr(float(getattr(self, k))) for k in CSV_FIELDS[1:]]


@dataclass
class TrainResult:
    config: TrainConfig
    metrics: list[IterationMetrics]
    policy: pol.StochasticPolicy
    steps: list[StepReport] = field(default_factory=list)
    discriminator: adv.Discriminator | None = None
    guide: gd.Guide | None = None

    def __iter__(self):
        return iter(self.metrics)

    def __len__(self):
        return len(self.metrics)


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


# ---------------------------------------------------------------- metrics CSV


def metrics_csv(metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for m in metrics:
        w.writerow(m.row())
    return buf.getvalue()


def write_metrics(metrics, path) -> None:
    Path(path).write_text(metrics_csv(metrics), encoding="utf-8")


def read_metrics(path) -> list[IterationMetrics]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_FIELDS:
        raise ParseError(f"metrics header must be {','.join(CSV_FIELDS)}", path=path, line=1)
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_FIELDS):
            raise ParseError(f"expected {len(CSV_FIELDS)} columns", path=path, line=i)
        try:
            out.append(IterationMetrics(int(row[0]), *(float(v) for v in row[1:])))
        except ValueError:
            raise ParseError("non-numeric metrics value", path=path, line=i) from None
    return out


# ---------------------------------------------------------------- reward composition


def compose_reward(s, a, sampled_a_e, d: adv.Discriminator, q: gd.Guide | None,
                   alpha: float, beta: float):
    """``alpha * D(s) + beta * Q(a_E | s, a)``; the guide is not queried when ``beta == 0``."""
    if d.mode != adv.STATE_ONLY:
        raise ConfigError("reward composition needs a state-only discriminator")
    reward = alpha * np.asarray(adv.expert_prob(d, s))
    if beta > 0:
        if q is None or sampled_a_e is None:
            raise ConfigError("beta > 0 needs a guide and a sampled demonstrated action")
        reward = reward + beta * np.asarray(gd.q_reward(q, sampled_a_e, a, s))
    return float(reward) if np.ndim(reward) == 0 else reward


# ---------------------------------------------------------------- shared pieces


def _setup(cfg: TrainConfig):
    env = make_env(cfg.env, gamma=cfg.gamma)
    rngs = seed_streams(cfg.seed)
    policy = pol.make_policy(env.spec, rngs["policy_init"], cfg.hidden, cfg.policy_head_scale,
                             cfg.value_lr)
    return env, rngs, policy


def _load_demos(cfg: TrainConfig, demoset, env: Env) -> dm.IncompleteDemoSet:
    if demoset is None:
        if not cfg.demos:
            raise ConfigError(f"algorithm {cfg.algorithm!r} needs a demonstration file")
        path = Path(cfg.demos)
        if not path.is_file():
            raise ConfigError(f"demonstration file {path} does not exist")
        demoset = dm.load(path)
    dm.check_compatible(demoset, env.spec)
    if demoset.n_states == 0:
        raise ConfigError("demonstration set is empty")
    return demoset


def _advantages(policy, seg, rewards, cfg):
    values = pol.value(policy, seg.states)
    trunc = seg.segment_end & ~seg.terminal
    bootstrap = np.zeros(len(values))
    if trunc.any():
        bootstrap[trunc] = pol.value(policy, seg.next_states[trunc])
    batch = pol.RolloutBatch(seg.states, seg.actions, rewards, seg.rewards, seg.log_probs,
                             values, seg.terminal, seg.segment_end, bootstrap,
                             episode_returns=list(seg.episode_returns))
    raw_adv, returns = pol.gae(batch, cfg.gamma, cfg.gae_lambda)
    batch.advantages = pol.normalize_advantages(raw_adv)
    batch.returns = returns
    return batch


def _mean_return(seg) -> float:
    if seg.episode_returns:
        return float(np.mean(seg.episode_returns))
    return float(np.sum(seg.rewards) / max(1, int(seg.segment_end.sum())))


def _checkpoint(cfg, policy, name):
    if not cfg.out_dir:
        return None
    path = Path(cfg.out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(pol.dump_policy(policy, f"algo={cfg.algorithm} seed={cfg.seed}"),
                    encoding="utf-8")
    return path


def _finite_or_abort(cfg, policy, m: IterationMetrics):
    vals = [m.true_return, m.composed_reward, m.kl, m.entropy]
    if not all(np.isfinite(v) for v in vals):
        path = _checkpoint(cfg, policy, f"diverged_iter{m.iter}.ckpt")
        raise TrainingError(f"non-finite metrics at iteration {m.iter}: {m}; "
                            f"checkpoint: {path}")


def _policy_step(cfg, policy, seg, rewards, rngs):
    if cfg.lambda1:
        rewards = rewards - cfg.lambda1 * seg.log_probs
    batch = _advantages(policy, seg, rewards, cfg)
    report = trpo_update(policy, batch, cfg.trpo)
    pol.fit_value(policy, batch.states, batch.returns, rngs["value"], cfg.value_epochs,
                  cfg.value_batch)
    return batch, report


def _run(cfg: TrainConfig, reward_fn, hooks_before=None, demoset=None):
    """Generic iteration loop: rollout -> hooks (D, Q updates) -> relabel -> TRPO step."""
    env, rngs, policy = _setup(cfg)
    state = {"env": env, "rngs": rngs, "policy": policy}
    if hooks_before is not None:
        hooks_before.setup(cfg, state, demoset)
    n_slots = cfg.n_slots or max(1, cfg.budget // env.spec.horizon)
    metrics, steps = [], []
    t0 = time.perf_counter()
    if cfg.iterations == 0:
        # one measurement rollout of the initial policy, no updates
        seg = collect(policy, env, cfg.budget, n_slots, rngs["rollout"])
        rewards = reward_fn(cfg, state, seg)
        metrics.append(IterationMetrics(
            0, _mean_return(seg), float(np.mean(rewards)), math.nan, math.nan, 0.0,
            float(np.mean(pol.entropy(policy, seg.states))),
            (time.perf_counter() - t0) if cfg.record_time else 0.0, False))
    for it in range(cfg.iterations):
        seg = collect(policy, env, cfg.budget, n_slots, rngs["rollout"])
        d_bce = q_nll = math.nan
        if hooks_before is not None:
            d_bce, q_nll = hooks_before.update(cfg, state, seg)
        rewards = reward_fn(cfg, state, seg)
        try:
            batch, report = _policy_step(cfg, policy, seg, rewards, rngs)
        except NumericalError as exc:
            _checkpoint(cfg, policy, f"diverged_iter{it}.ckpt")
            raise TrainingError(f"iteration {it}: {exc}") from exc
        steps.append(report)
        m = IterationMetrics(
            it, _mean_return(seg), float(np.mean(rewards)), d_bce, q_nll, report.kl,
            float(np.mean(pol.entropy(policy, seg.states))),
            (time.perf_counter() - t0) if cfg.record_time else 0.0, report.accepted)
        _finite_or_abort(cfg, policy, m)
        metrics.append(m)
        log.debug("iter %d return %.2f kl %.4g", it, m.true_return, m.kl)
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            _checkpoint(cfg, policy, f"iter{it + 1:05d}.ckpt")
    result = TrainResult(cfg, metrics, policy, steps)
    if hooks_before is not None:
        result.discriminator = state.get("disc")
        result.guide = state.get("guide")
    return result


class _Adversarial:
    """Discriminator (and optionally guide) updates run before each policy step."""

    def __init__(self, mode, use_guide):
        self.mode = mode
        self.use_guide = use_guide

    def setup(self, cfg, state, demoset):
        env, rngs = state["env"], state["rngs"]
        demos = _load_demos(cfg, demoset, env)
        if self.mode == adv.STATE_ACTION and demos.n_actions != demos.n_states:
            raise ConfigError("GAIL needs complete demonstrations (eta = 0)")
        state["demos"] = demos
        state["disc"] = adv.make_discriminator(env.spec, rngs["disc_init"], self.mode,
                                               cfg.hidden, cfg.d_lr)
        if self.mode == adv.STATE_ACTION:
            state["expert_states"], state["expert_actions"] = demos.action_pairs()
        beta = cfg.effective_beta * cfg.lambda2
        if self.use_guide and beta > 0:
            if demos.n_actions == 0:
                raise ConfigError("beta > 0 but the demonstrations contain no actions")
            state["guide"] = gd.make_guide(env.spec, rngs["guide_init"], cfg.hidden, cfg.q_lr)
            state["pair_states"], state["pair_actions"] = demos.action_pairs()

    def update(self, cfg, state, seg):
        rngs, disc, policy = state["rngs"], state["disc"], state["policy"]
        n = cfg.d_batch or len(seg.rewards)
        d_rng = rngs["disc"]
        d_bce = math.nan
        for _ in range(cfg.d_steps):
            idx = d_rng.integers(0, len(seg.rewards), size=n)
            if self.mode == adv.STATE_ACTION:
                e_idx = d_rng.integers(0, len(state["expert_states"]), size=n)
                rep = adv.d_update(disc, seg.states[idx], state["expert_states"][e_idx],
                                   seg.actions[idx], state["expert_actions"][e_idx])
            else:
                expert = dm.sample_expert_states(state["demos"], n, d_rng)
                rep = adv.d_update(disc, seg.states[idx], expert)
            d_bce = rep.loss_after
        q_nll = math.nan
        guide = state.get("guide")
        if guide is not None:
            q_rng = rngs["guide"]
            for _ in range(cfg.q_steps):
                pairs = dm.sample_expert_action_pairs(state["demos"], cfg.q_batch, q_rng)
                if pairs is None:
                    break
                s_e, a_e = pairs
                a, _ = pol.act(policy, s_e, q_rng)
                qrep = gd.q_update(guide, s_e, a_e, a)
                q_nll = qrep.nll_after
        return d_bce, q_nll


def _adversarial_reward(cfg, state, seg):
    disc = state["disc"]
    if disc.mode == adv.STATE_ACTION:
        return cfg.alpha * adv.disc_reward(disc, seg.states, seg.actions, cfg.d_reward)
    reward = cfg.alpha * adv.disc_reward(disc, seg.states, kind=cfg.d_reward)
    guide = state.get("guide")
    if guide is not None:
        pool = state["pair_actions"]
        a_e = pool[state["rngs"]["reward"].integers(0, len(pool), size=len(seg.rewards))]
        beta = cfg.effective_beta * cfg.lambda2
        reward = reward + beta * gd.q_reward(guide, a_e, seg.actions, seg.states)
    return reward


def _true_reward(cfg, state, seg):
    return seg.rewards.copy()


# ---------------------------------------------------------------- public entry points


def train_agail(cfg: TrainConfig, demoset=None) -> TrainResult:
    return _run(cfg, _adversarial_reward, _Adversarial(adv.STATE_ONLY, True), demoset)


def train_state_gail(cfg: TrainConfig, demoset=None) -> TrainResult:
    return _run(cfg, _adversarial_reward, _Adversarial(adv.STATE_ONLY, False), demoset)


def train_gail(cfg: TrainConfig, demoset=None) -> TrainResult:
    return _run(cfg, _adversarial_reward, _Adversarial(adv.STATE_ACTION, False), demoset)


def train_trpo_true(cfg: TrainConfig, demoset=None) -> TrainResult:
    return _run(cfg, _true_reward)


def train_bc(cfg: TrainConfig, demoset=None) -> TrainResult:
    """Maximum-likelihood fit of the policy to surviving (state, action) pairs.

    One iteration is one epoch of Adam minibatches; the true return is measured
    on ``bc_eval_episodes`` fresh episodes after every epoch.
    """
    env, rngs, policy = _setup(cfg)
    demos = _load_demos(cfg, demoset, env)
    states, actions = demos.action_pairs()
    if len(actions) == 0:
        raise ConfigError("behavior cloning needs at least one demonstrated action")
    adam = nc.AdamState(learning_rate=cfg.bc_lr)
    metrics = []
    t0 = time.perf_counter()
    rng = rngs["disc"]
    for it in range(cfg.iterations):
        loss = bc_epoch(policy, states, actions, adam, rng, cfg.bc_batch)
        eps = run_episodes(policy, env, cfg.bc_eval_episodes, rngs["rollout"])
        ret = float(np.mean([e.total_reward for e in eps])) if eps else math.nan
        ent = float(np.mean(pol.entropy(policy, states)))
        metrics.append(IterationMetrics(it, ret, math.nan, math.nan, math.nan, 0.0, ent,
                                        (time.perf_counter() - t0) if cfg.record_time else 0.0,
                                        True, loss))
    return TrainResult(cfg, metrics, policy)


def bc_nll(policy, states, actions) -> float:
    return float(-np.mean(pol.log_prob(policy, states, actions)))


def bc_epoch(policy, states, actions, adam: nc.AdamState, rng, batch_size=64) -> float:
    """One shuffled pass of Adam on the negative log-likelihood; returns the full-data NLL."""
    n = len(states)
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        cache = pol.dist_forward(policy, states[idx])
        grad = -pol.log_prob_grad(policy, cache, actions[idx], np.full(len(idx), 1.0 / len(idx)))
        params, _ = nc.adam_step(pol.get_params(policy), grad, adam)
        pol.set_params(policy, params)
    return bc_nll(policy, states, actions)


TRAINERS = {
    "agail": train_agail,
    "gail": train_gail,
    "state_gail": train_state_gail,
    "trpo": train_trpo_true,
    "bc": train_bc,
}


def train(cfg: TrainConfig, demoset=None) -> TrainResult:
    return TRAINERS[cfg.algorithm](cfg, demoset)


def evaluate(policy, env: Env, n_episodes: int, seed: int, greedy=False):
    """Mean and standard deviation of undiscounted episode returns."""
    eps = run_episodes(policy, env, n_episodes, np.random.default_rng(seed), greedy=greedy)
    if not eps:
        raise ConfigError("evaluate needs n_episodes >= 1")
    returns = np.array([e.total_reward for e in eps])
    return float(returns.mean()), float(returns.std()) if len(returns) > 1 else 0.0


def aggregate_seeds(per_seed_means) -> tuple[float, float]:
    """Cross-seed mean and (population) standard deviation, as reported per table cell."""
    x = np.asarray(per_seed_means, dtype=np.float64)
    return float(x.mean()), float(x.std())


def config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
