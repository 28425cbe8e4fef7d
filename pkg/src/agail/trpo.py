"""Trust-region policy step: surrogate gradient, damped Fisher products, CG, line search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policy as pol
from .errors import InputError, NumericalError


@dataclass
class TrpoConfig:
    max_kl: float = 0.01
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_coeff: float = 0.8
    backtrack_steps: int = 10
    accept_ratio: float = 0.1
    kl_slack: float = 1.5  # accepted steps satisfy mean KL <= kl_slack * max_kl
    fvp_subsample: float = 0.25  # fraction of rows (evenly strided) used for Fisher products

    def __post_init__(self):
        if min(self.max_kl, self.cg_iters, self.cg_damping, self.backtrack_steps) <= 0:
            raise InputError("TRPO constants must be positive")
        if not 0.0 < self.backtrack_coeff < 1.0:
            raise InputError("backtrack_coeff must lie in (0, 1)")
        if not 0.0 < self.fvp_subsample <= 1.0:
            raise InputError("fvp_subsample must lie in (0, 1]")


@dataclass
class StepReport:
    accepted: bool
    kl: float
    surrogate_delta: float
    expected_improve: float
    step_fraction: float
    cg_residual: float
    grad_norm: float


def conjugate_gradient(fvp, b, iters=10, tol=1e-10):
    """Approximately solve ``F x = b`` for a symmetric PSD operator ``fvp``.

    Returns ``(x, residual_norm)`` where the residual is the CG recurrence residual.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = r @ r
    for _ in range(iters):
        if rr <= tol:
            break
        fp = fvp(p)
        denom = p @ fp
        if not np.isfinite(denom) or denom <= 0:
            raise NumericalError("conjugate gradient hit a non-positive or non-finite curvature")
        step = rr / denom
        x += step * p
        r -= step * fp
        rr_new = r @ r
        if not np.isfinite(rr_new):
            raise NumericalError("conjugate gradient residual is not finite")
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, float(np.sqrt(rr))


def fisher_vector_product(policy, cache: pol.DistCache, damping=0.0):
    """Closure computing ``(H + damping I) v`` with H the Hessian of mean KL(old || new) at old.

    At the old parameters the KL gradient vanishes, so the Hessian reduces to
    ``J^T M J`` with ``M`` the KL curvature in head-output space.
    """
    out = cache.out
    n = len(out)
    if policy.discrete:
        probs = np.exp(pol.log_softmax(out))
    else:
        inv_var = np.exp(-2 * policy.log_std)

    def fvp(v):
        d_out, d_std = pol.dist_jvp(policy, cache, v)
        if policy.discrete:
            g = probs * d_out - probs * np.sum(probs * d_out, axis=1, keepdims=True)
            res = pol.dist_backward(policy, cache, g / n)
        else:
            res = pol.dist_backward(policy, cache, d_out * inv_var / n, 2.0 * d_std)
        return res + damping * v

    return fvp


def surrogate(policy, batch, cache=None) -> float:
    if cache is None:
        cache = pol.dist_forward(policy, batch.states)
    lp = pol._log_prob_from(policy, cache.out, batch.actions)
    return float(np.mean(np.exp(lp - batch.old_log_probs) * batch.advantages))


def surrogate_grad(policy, batch, cache=None) -> np.ndarray:
    """Gradient of the surrogate at the current parameters, assumed equal to the rollout policy."""
    if cache is None:
        cache = pol.dist_forward(policy, batch.states)
    lp = pol._log_prob_from(policy, cache.out, batch.actions)
    ratio = np.exp(lp - batch.old_log_probs)
    return pol.log_prob_grad(policy, cache, batch.actions, ratio * batch.advantages / len(batch))


def trpo_update(policy, batch, cfg: TrpoConfig | None = None) -> StepReport:
    """One trust-region step on ``policy`` in place.

    Parameters are restored bit-for-bit when no backtracked step passes both
    the KL bound and the improvement test.
    """
    cfg = cfg or TrpoConfig()
    if batch.advantages is None:
        raise InputError("batch advantages must be computed before a TRPO step")
    old_params = pol.get_params(policy)
    cache = pol.dist_forward(policy, batch.states)
    old_out = cache.out.copy()
    old_policy = policy.copy()
    g = surrogate_grad(policy, batch, cache)
    g_norm = float(np.linalg.norm(g))
    if not np.isfinite(g_norm):
        raise NumericalError("non-finite policy gradient")
    if g_norm == 0.0:
        return StepReport(False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    stride = max(1, int(round(1.0 / cfg.fvp_subsample)))
    fvp_cache = cache if stride == 1 else pol.dist_forward(policy, batch.states[::stride])
    fvp = fisher_vector_product(policy, fvp_cache, cfg.cg_damping)
    step_dir, residual = conjugate_gradient(fvp, g, cfg.cg_iters)
    shs = 0.5 * step_dir @ fvp(step_dir)
    if not shs > 0:
        return StepReport(False, 0.0, 0.0, 0.0, 0.0, residual, g_norm)
    full_step = step_dir * np.sqrt(cfg.max_kl / shs)
    expected_full = float(g @ full_step)
    base = surrogate(policy, batch, cache)

    frac = 1.0
    for _ in range(cfg.backtrack_steps):
        pol.set_params(policy, old_params + frac * full_step)
        new_cache = pol.dist_forward(policy, batch.states)
        improve = surrogate(policy, batch, new_cache) - base
        mean_kl = float(np.mean(pol.kl_from(old_policy, old_out, policy, new_cache.out)))
        expected = expected_full * frac
        if (np.isfinite(mean_kl) and mean_kl <= cfg.kl_slack * cfg.max_kl and improve > 0
                and improve / expected > cfg.accept_ratio):
            return StepReport(True, mean_kl, improve, expected, frac, residual, g_norm)
        frac *= cfg.backtrack_coeff
    pol.set_params(policy, old_params)
    return StepReport(False, 0.0, 0.0, expected_full, 0.0, residual, g_norm)
