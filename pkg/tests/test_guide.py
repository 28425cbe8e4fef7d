import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agail import guide as gd
from agail import numcore as nc
from agail.envs import Discrete, EnvSpec, make_env
from agail.errors import InputError

from helpers import enumerated_toy, partial_diff, rel_error, subset

TOY = EnvSpec("toy", 2, Discrete(2), 10)
PENDULUM = make_env("pendulum").spec
POINTMASS = make_env("pointmass").spec


def zero_output(g):
    g.net.layers[-1].weight[:] = 0.0
    g.net.layers[-1].bias[:] = 0.0
    return g


def test_input_width():
    g = gd.make_guide(POINTMASS, np.random.default_rng(0))
    assert g.net.input_dim == 6 and g.net.output_dim == 4
    with pytest.raises(InputError):
        gd.guide_inputs(g, np.zeros((3, 4)), np.zeros((2, 2)))


@pytest.mark.parametrize("n", [2, 5])
def test_uniform_posterior_nll(n):
    spec = EnvSpec("k", 3, Discrete(n), 10)
    g = zero_output(gd.make_guide(spec, np.random.default_rng(0)))
    rng = np.random.default_rng(1)
    s = rng.normal(size=(8, 3))
    assert gd.nll(g, s, rng.integers(0, n, 8), rng.integers(0, n, 8)) == pytest.approx(math.log(n))


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("spec", [TOY, PENDULUM, POINTMASS], ids=lambda s: s.name)
def test_nll_grad_finite_differences(spec, seed):
    rng = np.random.default_rng(seed)
    g = gd.make_guide(spec, rng, hidden=(10, 10), output_scale=1.0)
    n = 7
    s = rng.normal(size=(n, spec.state_dim))
    if spec.discrete:
        a, a_e = rng.integers(0, spec.action_dim, n), rng.integers(0, spec.action_dim, n)
    else:
        a, a_e = rng.normal(size=(n, spec.action_dim)), rng.normal(size=(n, spec.action_dim))
    grad = gd.nll_grad(g, s, a_e, a)
    theta = nc.flatten_params(g.net)

    def f(x):
        probe = gd.Guide(spec, g.net.copy())
        nc.set_flat_params(probe.net, x)
        return gd.nll(probe, s, a_e, a)

    idx = subset(theta.size, 80, rng)
    assert rel_error(grad[idx], partial_diff(f, theta, idx)).max() <= 1e-4


def test_nll_grad_zero_past_log_std_clip():
    g = zero_output(gd.make_guide(PENDULUM, np.random.default_rng(0)))
    g.net.layers[-1].bias[:] = [0.0, 5.0]  # raw log-std above the clip
    grad = gd.nll_grad(g, np.zeros((2, 3)), np.ones((2, 1)), np.zeros((2, 1)))
    bias_grad = grad[-2:]
    assert bias_grad[1] == 0.0 and bias_grad[0] != 0.0


def test_deterministic_expert_learned():
    rng = np.random.default_rng(0)
    g = gd.make_guide(TOY, rng)
    states = np.array([[1.0, 0.0], [0.0, 1.0]])
    for _ in range(1000):
        idx = rng.integers(0, 2, 64)
        gd.q_update(g, states[idx], idx, rng.integers(0, 2, 64))  # a_E = state index
    assert gd.nll(g, states, [0, 1], [0, 0]) < 0.1
    assert gd.nll(g, states, [0, 1], [1, 1]) < 0.1


def test_q_update_descent_small_lr():
    rng = np.random.default_rng(2)
    g = gd.make_guide(PENDULUM, rng, learning_rate=1e-4)
    s, a, a_e = rng.normal(size=(32, 3)), rng.normal(size=(32, 1)), rng.normal(size=(32, 1))
    for _ in range(20):
        rep = gd.q_update(g, s, a_e, a)
        assert rep.nll_after <= rep.nll_before


def test_q_update_empty_batch_untouched():
    g = gd.make_guide(TOY, np.random.default_rng(0))
    before = nc.flatten_params(g.net)
    assert gd.q_update(g, np.zeros((0, 2)), np.zeros(0, int), np.zeros(0, int)) is None
    assert nc.flatten_params(g.net).tobytes() == before.tobytes()
    assert g.adam.step_count == 0


def test_q_reward_examples():
    g = zero_output(gd.make_guide(TOY, np.random.default_rng(0)))
    assert gd.q_reward(g, 1, 0, np.zeros(2)) == pytest.approx(0.5)
    g.net.layers[-1].bias[:] = [math.log(9.0), 0.0]  # posterior (0.9, 0.1)
    assert gd.q_reward(g, 0, 1, np.zeros(2)) == pytest.approx(0.9)
    c = zero_output(gd.make_guide(PENDULUM, np.random.default_rng(0)))
    c.net.layers[-1].bias[:] = [0.7, -0.3]
    assert gd.q_reward(c, [0.7], [0.1], np.zeros(3)) == 1.0
    assert gd.q_reward(c, [1.7], [0.1], np.zeros(3)) == pytest.approx(math.exp(-0.5 / math.exp(-0.6)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_q_reward_bounded(seed, offset):
    rng = np.random.default_rng(seed)
    g = gd.make_guide(POINTMASS, rng, hidden=(8,), output_scale=3.0)
    s = rng.normal(size=(6, 4))
    r = gd.q_reward(g, rng.normal(size=(6, 2)) + offset, rng.normal(size=(6, 2)), s)
    assert np.all((r >= 0) & (r <= 1))
    t = gd.make_guide(TOY, rng, hidden=(8,), output_scale=3.0)
    r = gd.q_reward(t, rng.integers(0, 2, 6), rng.integers(0, 2, 6), s[:, :2] * offset)
    assert np.all((r > 0) & (r <= 1))


def test_marginal_entropy():
    assert gd.marginal_entropy(TOY, [0, 1, 0, 1]) == pytest.approx(math.log(2))
    assert gd.marginal_entropy(TOY, [1, 1, 1]) == 0.0
    a = np.random.default_rng(0).normal(scale=2.0, size=(200_000, 1))
    assert gd.marginal_entropy(PENDULUM, a) == pytest.approx(0.5 * math.log(2 * math.pi * math.e * 4),
                                                             abs=1e-2)


def test_lower_bound_uniform_posterior_is_zero():
    g = zero_output(gd.make_guide(TOY, np.random.default_rng(0)))
    s = np.zeros((4, 2))
    assert gd.lower_bound_estimate(g, s, [0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-12)


def test_lower_bound_perfect_posterior_is_ln2():
    g = gd.make_guide(TOY, np.random.default_rng(0))
    # logits follow the first state coordinate sharply: a_E = 0 on [1, 0], a_E = 1 on [-1, 0]
    g.net = nc.Mlp([nc.Layer(np.array([[40.0, 0, 0, 0], [-40.0, 0, 0, 0]]), np.zeros(2),
                             "identity")])
    s = np.array([[1.0, 0.0], [-1.0, 0.0]])
    lb = gd.lower_bound_estimate(g, s, [0, 1], [0, 0])
    assert lb == pytest.approx(math.log(2), abs=1e-6)


def test_lower_bound_needs_batch():
    g = gd.make_guide(TOY, np.random.default_rng(0))
    with pytest.raises(InputError):
        gd.lower_bound_estimate(g, np.zeros((0, 2)), [], [])


def test_lower_bound_below_exact_mutual_information():
    s, a, a_e, mi = enumerated_toy()
    rng = np.random.default_rng(0)
    g = gd.make_guide(TOY, rng, learning_rate=1e-3)
    h = gd.marginal_entropy(TOY, a_e)
    bounds = []
    for step in range(400):
        idx = rng.integers(0, len(s), 128)
        gd.q_update(g, s[idx], a_e[idx], a[idx])
        if step % 20 == 0:
            bounds.append(gd.lower_bound_estimate(g, s, a_e, a, h))
    bounds.append(gd.lower_bound_estimate(g, s, a_e, a, h))
    assert max(bounds) <= mi + 0.02
    assert bounds[-1] > mi - 0.02  # the bound tightens once Q matches the posterior
