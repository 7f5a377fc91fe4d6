from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacmdp.dataset import (
    BehaviorPolicy, ExperienceDataset, from_tuples, generate_dataset, load_dataset, save_dataset,
)
from dacmdp.envs import CartPole, EnvSpec
from dacmdp.errors import DataError


def random_dataset(seed: int, n: int = 50, d: int = 3, A: int = 2) -> ExperienceDataset:
    rng = np.random.default_rng(seed)
    return ExperienceDataset(
        rng.standard_normal((n, d)), rng.integers(A, size=n), rng.standard_normal(n),
        rng.standard_normal((n, d)), rng.random(n) < 0.1, A, {"seed": seed},
    )


def test_single_jsonl_record_without_header(tmp_path):
    p = tmp_path / "one.jsonl"
    p.write_text('{"s":[0,0,0,0],"a":0,"r":1.0,"s2":[0,0,0,0],"t":false}\n')
    ds = load_dataset(p, action_count=2)
    assert len(ds) == 1 and ds.state_dim == 4 and ds.action_count == 2
    assert ds[0].reward == 1.0 and not ds[0].terminal


def test_missing_header_infers_action_count(tmp_path):
    p = tmp_path / "d.jsonl"
    lines = [{"s": [0.0], "a": a, "r": 0.0, "s2": [1.0], "t": False} for a in (0, 2, 1)]
    p.write_text("\n".join(json.dumps(x) for x in lines))
    assert load_dataset(p).action_count == 3


def test_action_out_of_range(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"action_count": 2, "state_dim": 4}\n{"s":[0,0,0,0],"a":5,"r":1.0,"s2":[0,0,0,0],"t":false}\n')
    with pytest.raises(DataError, match="action out of range"):
        load_dataset(p)


@pytest.mark.parametrize(
    "line, message",
    [
        ('{"s":[0,0],"a":0,"r":1.0,"s2":[0],"t":false}', "dimension mismatch"),
        ('{"s":[0,0],"a":0,"r":NaN,"s2":[0,0],"t":false}', "non-finite"),
        ('{"s":[0,0],"a":0,"r":1.0', "parse failure"),
        ('{"s":[0,0],"a":0,"r":1.0,"t":false}', "missing field"),
    ],
)
def test_jsonl_errors_name_the_line(tmp_path, line, message):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"s":[1,1],"a":0,"r":0.0,"s2":[1,1],"t":false}\n' + line + "\n")
    with pytest.raises(DataError, match=message) as err:
        load_dataset(p)
    assert ":2:" in str(err.value)


def test_non_finite_rejected_in_memory():
    with pytest.raises(DataError, match="non-finite"):
        ExperienceDataset([[0.0, np.inf]], [0], [0.0], [[0.0, 0.0]], [False], 1)


def test_empty_rejected():
    with pytest.raises(DataError, match="empty"):
        from_tuples([], 2)


def test_jsonl_layout_three_tuples(tmp_path):
    ds = random_dataset(0, n=3)
    ds = ExperienceDataset(ds.states, ds.actions, ds.rewards, ds.next_states, ds.terminals, 2)
    p = tmp_path / "d.jsonl"
    save_dataset(ds, p)
    lines = p.read_text().splitlines()
    assert len(lines) == 4
    assert json.loads(lines[0]) == {"action_count": 2, "state_dim": 3}


def test_binary_magic(tmp_path):
    p = tmp_path / "d.bin"
    save_dataset(random_dataset(1), p)
    assert p.read_bytes()[:4] == b"DACD"


def test_binary_bad_magic(tmp_path):
    p = tmp_path / "d.bin"
    save_dataset(random_dataset(1), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="bad magic"):
        load_dataset(p)


def test_binary_truncated(tmp_path):
    p = tmp_path / "d.bin"
    save_dataset(random_dataset(1), p)
    p.write_bytes(p.read_bytes()[:60])
    with pytest.raises(DataError, match="truncated"):
        load_dataset(p)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40), d=st.integers(1, 6),
    A=st.integers(1, 4), fmt=st.sampled_from(["jsonl", "binary"]),
)
def test_round_trip_bit_exact(tmp_path_factory, seed, n, d, A, fmt):
    ds = random_dataset(seed, n, d, A)
    p = tmp_path_factory.mktemp("rt") / ("d.jsonl" if fmt == "jsonl" else "d.bin")
    save_dataset(ds, p)
    back = load_dataset(p)
    assert back.same_tuples(ds)
    assert back.metadata == ds.metadata


@pytest.mark.parametrize("fmt", ["jsonl", "binary"])
def test_round_trip_10k(tmp_path, fmt):
    ds = random_dataset(7, n=10_000, d=4, A=3)
    p = tmp_path / f"d.{fmt}"
    save_dataset(ds, p, fmt)
    assert load_dataset(p, fmt).same_tuples(ds)


def test_reward_clipping_is_opt_in(tmp_path):
    ds = ExperienceDataset([[0.0]] * 3, [0, 0, 0], [-5.0, 0.5, 7.0], [[0.0]] * 3, [False] * 3, 1)
    p = tmp_path / "d.bin"
    save_dataset(ds, p)
    assert load_dataset(p).rewards.tolist() == [-5.0, 0.5, 7.0]
    assert load_dataset(p, clip_rewards=(-1, 1)).rewards.tolist() == [-1.0, 0.5, 1.0]


def test_dataset_is_read_only():
    ds = random_dataset(0)
    with pytest.raises(ValueError):
        ds.states[0, 0] = 1.0


def test_generate_is_deterministic():
    a = generate_dataset(CartPole(), BehaviorPolicy("random"), 100, seed=7)
    b = generate_dataset(CartPole(), BehaviorPolicy("random"), 100, seed=7)
    c = generate_dataset(CartPole(), BehaviorPolicy("random"), 100, seed=8)
    assert len(a) == 100 and a.same_tuples(b)
    assert not a.same_tuples(c)


def test_generate_single_step_terminal_matches_env():
    ds = generate_dataset(CartPole(), BehaviorPolicy("random"), 1, seed=3)
    env = CartPole()
    rng = np.random.default_rng(3)
    env.reset(int(rng.integers(2**63 - 1)))
    rng.random()
    _, _, term = env.step(int(rng.integers(2)))
    assert len(ds) == 1 and ds[0].terminal == term


def test_mixed_bag_epsilons_and_episode_draw():
    pol = BehaviorPolicy.parse("mixed")
    assert pol.eps == (0.0, 0.1, 0.2, 0.4, 0.6, 1.0)
    ds = generate_dataset(CartPole(), pol, 3000, seed=1)
    assert ds.metadata["eps"] == [0.0, 0.1, 0.2, 0.4, 0.6, 1.0]
    assert set(ds.actions.tolist()) == {0, 1}


def test_scripted_cartpole_data_is_long_episodes():
    ds = generate_dataset(CartPole(), BehaviorPolicy.parse("optimal"), 2000, seed=0)
    assert ds.terminals.sum() == 0


def test_grid_generation_uses_env_actions():
    env = EnvSpec("gridworld", "simple", start_mode="random").make()
    ds = generate_dataset(env, BehaviorPolicy("random"), 500, seed=2)
    assert ds.action_count == 3 and ds.state_dim == 4
    assert ds.terminals.any()
