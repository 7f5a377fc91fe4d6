from __future__ import annotations

import numpy as np
import pytest

from dacmdp.envs import CartPole, EnvSpec, GridLayout, GridWorld, evaluate_policy, load_layout
from dacmdp.envs.cartpole import dynamics, scripted_action
from dacmdp.envs.grid import FORWARD, TURN_LEFT, encode
from dacmdp.errors import ConfigError, DacError


def rollout(env, actions):
    return [env.step(a) for a in actions]


def test_cartpole_is_deterministic_given_seed():
    a, b = CartPole(seed=3), CartPole(seed=3)
    assert np.array_equal(a.reset(), b.reset())
    acts = [0, 1, 1, 0, 1]
    for (o1, r1, t1), (o2, r2, t2) in zip(rollout(a, acts), rollout(b, acts)):
        assert np.array_equal(o1, o2) and r1 == r2 and t1 == t2


def test_cartpole_upright_state_only_moves_by_force():
    nxt = dynamics(np.zeros(4), 1)
    assert nxt[0] == 0.0 and nxt[2] == 0.0
    assert nxt[1] > 0 and nxt[3] < 0
    left = dynamics(np.zeros(4), 0)
    np.testing.assert_allclose(left, -nxt)


def test_cartpole_terminates_and_refuses_further_steps():
    env = CartPole(seed=0)
    env.reset()
    done = False
    while not done:
        _, r, done = env.step(1)
        assert r == 1.0
    assert env.step_count < 100
    with pytest.raises(DacError):
        env.step(0)


def test_scripted_controller_beats_random():
    spec = EnvSpec("cartpole")
    good = evaluate_policy(spec, scripted_action, 10, seed=0)
    bad = evaluate_policy(spec, lambda o: 0, 10, eps=1.0, seed=0)
    assert good.mean_return == 500.0 and bad.mean_return < 60


def test_grid_wall_bump():
    layout = GridLayout.parse("###\n#G#\n#.#\n###")
    env = GridWorld(layout, horizon=10, start_mode="random", seed=0)
    env.reset()
    env.pos, env.heading = (1, 2), 3  # facing the south wall
    total = sum(r for _, r, _ in rollout(env, [FORWARD] * 10))
    assert total == -10.0 and env.pos == (1, 2)


def test_grid_goal_is_terminal():
    layout = GridLayout.parse("###\n#G#\n#.#\n###")
    env = GridWorld(layout, seed=0)
    env.reset()
    env.pos, env.heading = (1, 2), 1
    obs, r, term = env.step(FORWARD)
    assert r == 1.0 and term and np.array_equal(obs, encode(layout, (1, 1), 1))
    with pytest.raises(DacError):
        env.step(FORWARD)


def test_grid_turns_change_heading_only():
    env = GridWorld(load_layout("simple"), seed=0)
    o = env.reset()
    o2, r, _ = env.step(TURN_LEFT)
    assert r == 0.0 and np.array_equal(o[:2], o2[:2]) and not np.array_equal(o[2:], o2[2:])


@pytest.mark.parametrize("name", ["simple", "box_and_pillar", "tunnel"])
def test_agent_never_occupies_blocked_cell(name):
    layout = load_layout(name)
    env = GridWorld(layout, start_mode="random", seed=1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        env.reset()
        while not env.done:
            env.step(int(rng.integers(3)))
            assert not layout.blocked(env.pos)


@pytest.mark.parametrize("name", ["simple", "box_and_pillar", "tunnel"])
def test_scripted_grid_reaches_goal(name):
    env = EnvSpec("gridworld", name, start_mode="random").make(seed=0)
    for _ in range(10):
        env.reset()
        while not env.done:
            env.step(env.scripted_action())
        assert env.terminated and env.pos == env.layout.goal


def test_hazard_cells_block_and_cost():
    layout = load_layout("tunnel")
    assert layout.hazard_cells and layout.hazard_adjacent()
    assert all(not layout.blocked(c) for c in layout.hazard_adjacent())


def test_evaluation_is_seeded_and_batch_independent():
    spec = EnvSpec("cartpole")
    a = evaluate_policy(spec, scripted_action, 6, eps=0.3, seed=4)
    b = evaluate_policy(spec, scripted_action, 6, eps=0.3, seed=4)
    c = evaluate_policy(spec, scripted_action, 3, eps=0.3, seed=4)
    assert a.per_episode == b.per_episode and a.per_episode[:3] == c.per_episode
    lo, hi = a.ci90()
    assert lo <= a.mean_return <= hi


def test_env_spec_validation():
    with pytest.raises(ConfigError):
        EnvSpec("mountaincar")
    with pytest.raises(ConfigError):
        EnvSpec("gridworld")
    with pytest.raises(ConfigError):
        evaluate_policy(EnvSpec(), scripted_action, 0)
