import numpy as np
import pytest

from agail import policy as pol
from agail import trpo
from agail.envs import make_env
from agail.errors import InputError, NumericalError

from helpers import partial_diff, rel_error, subset

CARTPOLE = make_env("cartpole").spec
PENDULUM = make_env("pendulum").spec


def batch_for(p, n=64, seed=0, advantages=None):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(n, p.spec.state_dim))
    a, lp = pol.act(p, s, rng)
    adv = rng.normal(size=n) if advantages is None else np.asarray(advantages, float)
    z = np.zeros(n)
    return pol.RolloutBatch(s, a, z, z, lp, z, np.zeros(n, bool), np.ones(n, bool), z,
                            advantages=adv)


def small(spec, seed=0):
    return pol.make_policy(spec, np.random.default_rng(seed), hidden=(16, 16), head_scale=0.5)


# ---------------------------------------------------------------- conjugate gradient


def test_cg_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    x, res = trpo.conjugate_gradient(lambda v: v, b, iters=1)
    np.testing.assert_allclose(x, b)
    assert res == pytest.approx(0.0, abs=1e-12)


def test_cg_diagonal_2x2():
    a = np.array([[2.0, 0.0], [0.0, 4.0]])
    x, _ = trpo.conjugate_gradient(lambda v: a @ v, np.array([2.0, 4.0]))
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_cg_random_spd(seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(8, 8))
    a = m @ m.T + 0.5 * np.eye(8)
    b = rng.normal(size=8)
    x, res = trpo.conjugate_gradient(lambda v: a @ v, b, iters=8, tol=0.0)
    assert np.linalg.norm(a @ x - b) <= 1e-8
    assert res <= 1e-8
    np.testing.assert_allclose(x, np.linalg.solve(a, b), rtol=1e-6)


def test_cg_non_finite():
    with pytest.raises(NumericalError):
        trpo.conjugate_gradient(lambda v: v * np.nan, np.ones(3))


# ---------------------------------------------------------------- Fisher products


def mean_kl_at(p, old_out, s, theta):
    probe = p.copy()
    pol.set_params(probe, theta)
    return float(np.mean(pol.kl_from(p, old_out, probe, pol.dist_forward(probe, s).out)))


@pytest.mark.parametrize("spec", [CARTPOLE, PENDULUM], ids=lambda s: s.name)
def test_fvp_symmetric(spec):
    p = small(spec, 1)
    s = np.random.default_rng(2).normal(size=(20, spec.state_dim))
    fvp = trpo.fisher_vector_product(p, pol.dist_forward(p, s), damping=0.1)
    rng = np.random.default_rng(3)
    n = pol.get_params(p).size
    for _ in range(5):
        u, v = rng.normal(size=n), rng.normal(size=n)
        assert abs(u @ fvp(v) - v @ fvp(u)) <= 1e-8


@pytest.mark.parametrize("spec", [CARTPOLE, PENDULUM], ids=lambda s: s.name)
def test_fvp_matches_kl_curvature(spec):
    # second difference of mean KL(old || old + e v) along v gives v^T H v
    p = small(spec, 4)
    s = np.random.default_rng(5).normal(size=(10, spec.state_dim))
    cache = pol.dist_forward(p, s)
    fvp = trpo.fisher_vector_product(p, cache)
    theta = pol.get_params(p)
    rng = np.random.default_rng(6)
    eps = 1e-3
    for _ in range(3):
        v = rng.normal(size=theta.size)
        v /= np.linalg.norm(v)
        numeric = (mean_kl_at(p, cache.out, s, theta + eps * v)
                   + mean_kl_at(p, cache.out, s, theta - eps * v)) / eps ** 2
        assert v @ fvp(v) == pytest.approx(numeric, rel=1e-4, abs=1e-9)


def test_fvp_damping_adds_identity():
    p = small(CARTPOLE)
    cache = pol.dist_forward(p, np.zeros((3, 4)))
    v = np.random.default_rng(0).normal(size=pol.get_params(p).size)
    diff = trpo.fisher_vector_product(p, cache, 0.1)(v) - trpo.fisher_vector_product(p, cache)(v)
    np.testing.assert_allclose(diff, 0.1 * v, atol=1e-15)


# ---------------------------------------------------------------- surrogate


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("spec", [CARTPOLE, PENDULUM], ids=lambda s: s.name)
def test_surrogate_grad_finite_differences(spec, seed):
    p = small(spec, seed)
    b = batch_for(p, n=12, seed=seed)
    # evaluate away from the rollout policy so the importance ratio is not 1
    theta = pol.get_params(p) + 0.05 * np.random.default_rng(seed).normal(
        size=pol.get_params(p).size)
    pol.set_params(p, theta)
    g = trpo.surrogate_grad(p, b)

    def f(x):
        probe = p.copy()
        pol.set_params(probe, x)
        return trpo.surrogate(probe, b)

    idx = subset(theta.size, 80, np.random.default_rng(seed))
    assert rel_error(g[idx], partial_diff(f, theta, idx)).max() <= 1e-4


def test_surrogate_grad_is_weighted_score_at_old_params():
    p = small(CARTPOLE)
    b = batch_for(p, n=30)
    expected = pol.log_prob_grad(p, pol.dist_forward(p, b.states), b.actions,
                                 b.advantages / len(b))
    np.testing.assert_allclose(trpo.surrogate_grad(p, b), expected, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------- full step


def test_zero_advantages_no_op():
    p = small(CARTPOLE)
    before = pol.get_params(p)
    rep = trpo.trpo_update(p, batch_for(p, advantages=np.zeros(64)))
    assert not rep.accepted
    assert pol.get_params(p).tobytes() == before.tobytes()


def test_missing_advantages():
    p = small(CARTPOLE)
    b = batch_for(p)
    b.advantages = None
    with pytest.raises(InputError):
        trpo.trpo_update(p, b)


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("spec", [CARTPOLE, PENDULUM], ids=lambda s: s.name)
def test_accepted_steps_respect_trust_region(spec, seed):
    p = small(spec, seed)
    old = p.copy()
    b = batch_for(p, n=200, seed=seed)
    cfg = trpo.TrpoConfig()
    rep = trpo.trpo_update(p, b, cfg)
    measured = float(np.mean(pol.kl(old, p, b.states)))
    if rep.accepted:
        assert measured <= 1.5 * cfg.max_kl
        assert measured == pytest.approx(rep.kl, rel=1e-9)
        assert rep.surrogate_delta > 0
    else:
        assert pol.get_params(p).tobytes() == pol.get_params(old).tobytes()


def test_rejected_step_restores_parameters():
    p = small(PENDULUM, 3)
    before = pol.get_params(p)
    rep = trpo.trpo_update(p, batch_for(p), trpo.TrpoConfig(accept_ratio=1e9))
    assert not rep.accepted
    assert pol.get_params(p).tobytes() == before.tobytes()


def test_preferred_action_gains_probability():
    p = small(CARTPOLE, 7)
    s = np.tile(np.array([0.1, -0.2, 0.05, 0.3]), (64, 1))
    a = np.array([0, 1] * 32)
    lp = pol.log_prob(p, s, a)
    adv = np.where(a == 0, 1.0, -1.0)
    z = np.zeros(64)
    b = pol.RolloutBatch(s, a, z, z, lp, z, np.zeros(64, bool), np.ones(64, bool), z,
                         advantages=adv)
    p0 = np.exp(pol.log_prob(p, s[0], 0))
    rep = trpo.trpo_update(p, b)
    assert rep.accepted
    assert np.exp(pol.log_prob(p, s[0], 0)) > p0


@pytest.mark.parametrize("kwargs", [dict(max_kl=0), dict(backtrack_coeff=1.0),
                                    dict(cg_iters=0), dict(fvp_subsample=0.0)])
def test_config_validation(kwargs):
    with pytest.raises(InputError):
        trpo.TrpoConfig(**kwargs)
