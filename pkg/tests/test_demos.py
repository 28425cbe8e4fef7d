import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agail import demos as dm
from agail import policy as pol
from agail.envs import make_env
from agail.errors import ConfigError, InputError, ParseError
from agail.rollout import Trajectory


def fake_trajs(lengths, discrete=True, seed=0, state_dim=4):
    rng = np.random.default_rng(seed)
    out = []
    for n in lengths:
        acts = rng.integers(0, 2, n) if discrete else rng.normal(size=(n, 1))
        out.append(Trajectory(rng.normal(size=(n, state_dim)), acts, rng.normal(size=n)))
    return out


@pytest.fixture(scope="module")
def cartpole_policy():
    env = make_env("cartpole")
    return env, pol.make_policy(env.spec, np.random.default_rng(0), hidden=(16,))


def test_record_zero_episodes(cartpole_policy):
    env, p = cartpole_policy
    assert dm.record(p, env, 0, seed=1) == []


def test_record_deterministic(cartpole_policy):
    env, p = cartpole_policy
    a = dm.record(p, env, 4, seed=3)
    b = dm.record(p, env, 4, seed=3)
    for x, y in zip(a, b):
        assert x.states.tobytes() == y.states.tobytes()
        assert x.actions.tobytes() == y.actions.tobytes()
    lengths = [len(t) for t in a]
    assert all(1 <= n <= 200 for n in lengths)
    assert all(len(t.actions) == len(t.states) == len(t.rewards) for t in a)


def test_mask_extremes():
    trajs = fake_trajs([30, 17])
    full = dm.mask(trajs, 0.0, seed=1)
    assert all(t.available.all() for t in full.trajectories)
    none = dm.mask(trajs, 1.0, seed=1)
    assert none.n_actions == 0
    assert all((t.actions == dm.MISSING_DISCRETE).all() for t in none.trajectories)


def test_mask_three_quarters_of_200():
    ds = dm.mask(fake_trajs([200]), 0.75, seed=4)
    assert ds.trajectories[0].n_actions == 50


def test_mask_rejects_bad_eta():
    with pytest.raises(InputError):
        dm.mask(fake_trajs([5]), 1.5, seed=0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.integers(1, 300), st.integers(0, 2 ** 31))
def test_mask_count_and_preservation(eta, n, seed):
    traj = fake_trajs([n], seed=seed % 1000)[0]
    t = dm.mask([traj], eta, seed).trajectories[0]
    assert t.n_actions == round((1 - eta) * n)
    assert t.states.tobytes() == traj.states.tobytes()
    assert t.rewards.tobytes() == traj.rewards.tobytes()
    assert np.array_equal(t.actions[t.available], traj.actions[t.available])


def test_mask_continuous_uses_nan():
    traj = fake_trajs([20], discrete=False)
    t = dm.mask(traj, 0.5, seed=0).trajectories[0]
    assert not dm.mask(traj, 0.5, seed=0).discrete
    assert np.isnan(t.actions[~t.available]).all()
    assert np.isfinite(t.actions[t.available]).all()


def test_mask_seed_behavior():
    trajs = fake_trajs([100])
    a = dm.mask(trajs, 0.5, seed=1).trajectories[0].available
    b = dm.mask(trajs, 0.5, seed=1).trajectories[0].available
    c = dm.mask(trajs, 0.5, seed=2).trajectories[0].available
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_round_trip_empty(tmp_path):
    ds = dm.IncompleteDemoSet("cartpole", 0.25, 7, [], True)
    dm.save(ds, tmp_path / "d.txt")
    assert dm.load(tmp_path / "d.txt").same_as(ds)


def test_round_trip_half_masked(tmp_path, cartpole_policy):
    env, p = cartpole_policy
    ds = dm.mask(dm.record(p, env, 3, seed=0), 0.5, seed=9, env="cartpole")
    dm.save(ds, tmp_path / "d.txt")
    back = dm.load(tmp_path / "d.txt")
    assert back.same_as(ds)
    for a, b in zip(ds.trajectories, back.trajectories):
        assert np.array_equal(a.available, b.available)
        assert a.states.tobytes() == b.states.tobytes()


def test_round_trip_continuous(tmp_path):
    trajs = fake_trajs([12, 5], discrete=False, state_dim=3)
    ds = dm.mask(trajs, 0.5, seed=0, env="pendulum", discrete=False)
    dm.save(ds, tmp_path / "p.txt")
    back = dm.load(tmp_path / "p.txt")
    assert back.same_as(ds) and not back.discrete
    assert back.trajectories[0].actions.shape == (12, 1)


def test_fully_masked_continuous_keeps_width(tmp_path):
    trajs = fake_trajs([6], discrete=False, state_dim=4)
    trajs[0].actions = np.zeros((6, 2))
    ds = dm.mask(trajs, 1.0, seed=0, env="pointmass", discrete=False)
    dm.save(ds, tmp_path / "m.txt")
    assert dm.load(tmp_path / "m.txt").trajectories[0].actions.shape == (6, 2)


def test_truncated_file(tmp_path):
    ds = dm.mask(fake_trajs([10, 10]), 0.5, seed=0, env="cartpole")
    dm.save(ds, tmp_path / "d.txt")
    text = (tmp_path / "d.txt").read_text()
    (tmp_path / "t.txt").write_text(text[:-40])
    with pytest.raises(ParseError) as err:
        dm.load(tmp_path / "t.txt")
    assert err.value.line == 3


@pytest.mark.parametrize("body, line", [
    ("AGAIL-DEMOS v2 env=cartpole eta=0 seed=0\n", 1),
    ("AGAIL-DEMOS v1 env=cartpole eta=x seed=0\n", 1),
    ("AGAIL-DEMOS v1 env=cartpole eta=0 seed=0\n{not json}\n", 2),
    ('AGAIL-DEMOS v1 env=cartpole eta=0 seed=0\n{"states":[[0,0,0,0]],"actions":[1],'
     '"rewards":[1]}\n{"states":[[0,0,0,0]],"actions":[],"rewards":[1]}\n', 3),
    ('AGAIL-DEMOS v1 env=cartpole eta=0 seed=0\n{"states":[[0,0,0,0]],"actions":["a"],'
     '"rewards":[1]}\n', 2),
    ("", 1),
])
def test_malformed_files(tmp_path, body, line):
    (tmp_path / "bad.txt").write_text(body)
    with pytest.raises(ParseError) as err:
        dm.load(tmp_path / "bad.txt")
    assert err.value.line == line


def test_sample_states_single():
    ds = dm.mask(fake_trajs([1]), 0.0, seed=0)
    s = dm.sample_expert_states(ds, 1, np.random.default_rng(0))
    assert np.array_equal(s[0], ds.trajectories[0].states[0])


def test_sample_states_empty_batch_and_set():
    ds = dm.mask(fake_trajs([3]), 0.0, seed=0)
    assert dm.sample_expert_states(ds, 0, np.random.default_rng(0)).shape == (0, 4)
    with pytest.raises(InputError):
        dm.sample_expert_states(dm.IncompleteDemoSet("", 0.0, 0), 4, np.random.default_rng(0))


def test_sample_states_uniform():
    ds = dm.mask(fake_trajs([1, 2]), 0.0, seed=0)
    n = 30_000
    s = dm.sample_expert_states(ds, n, np.random.default_rng(1))
    pool = ds.all_states()
    counts = np.array([np.sum(np.all(s == row, axis=1)) for row in pool])
    assert counts.sum() == n
    sigma = np.sqrt(n * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - n / 3) <= 3 * sigma)


def test_action_pair_pools():
    full = dm.mask(fake_trajs([40]), 0.0, seed=0)
    assert len(full.action_pairs()[1]) == 40
    assert dm.sample_expert_action_pairs(dm.mask(fake_trajs([40]), 1.0, seed=0), 8,
                                         np.random.default_rng(0)) is None
    half = dm.mask(fake_trajs([100]), 0.5, seed=0)
    states, actions = half.action_pairs()
    assert len(actions) == 50
    s, a = dm.sample_expert_action_pairs(half, 500, np.random.default_rng(0))
    t = half.trajectories[0]
    kept = {row.tobytes() for row in t.states[t.available]}
    assert all(row.tobytes() in kept for row in s)
    assert (a >= 0).all()


def test_check_compatible():
    ds = dm.mask(fake_trajs([5]), 0.0, seed=0, env="cartpole")
    dm.check_compatible(ds, make_env("cartpole").spec)
    with pytest.raises(ConfigError):
        dm.check_compatible(ds, make_env("pendulum").spec)
    ds.env = ""
    with pytest.raises(ConfigError):
        dm.check_compatible(ds, make_env("pointmass").spec)  # discrete vs continuous
