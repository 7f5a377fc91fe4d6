from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacmdp.compiler import CoreMdp
from dacmdp.config import DacConfig
from dacmdp.errors import ConfigError, DataError, NumericError
from dacmdp.solver import (
    bellman_sweep, dense_backup_oracle, load_solution, save_solution, solve_parallel,
    synthetic_mdp, value_iterate,
)


def tiny(T_I, T_P, R, mask=None) -> CoreMdp:
    T_I = np.asarray(T_I, np.int32)
    T_P = np.asarray(T_P, np.float64)
    mask = np.zeros(T_I.shape, bool) if mask is None else np.asarray(mask, bool)
    return CoreMdp(T_I, T_P, np.asarray(R, np.float64), mask, np.arange(T_I.shape[0], dtype=np.float32)[:, None])


def test_single_sweep_self_loop():
    m = tiny([[[0]]], [[[1.0]]], [[1.0]])
    V, Q, delta = bellman_sweep(m, np.zeros(1), gamma=0.9)
    assert V.tolist() == [1.0] and Q.tolist() == [[1.0]] and delta.tolist() == [1.0]


def test_self_loop_fixed_point():
    m = tiny([[[0]]], [[[1.0]]], [[1.0]])
    res = value_iterate(m, DacConfig(delta_min=1e-12), gamma=0.9)
    assert res.V[0] == pytest.approx(10.0, abs=1e-10)


def test_gamma_zero_gives_max_reward():
    m = synthetic_mdp(30, 3, 4, seed=1)
    res = value_iterate(m, DacConfig(gamma=0.0))
    np.testing.assert_array_equal(res.V, m.R.max(axis=1))
    assert res.iterations == 2


def test_two_state_chain():
    # state 0 -> state 1 (reward 1), state 1 -> absorbing terminal (reward 1)
    m = tiny([[[1]], [[0]]], [[[1.0]], [[1.0]]], [[1.0], [1.0]], mask=[[[False]], [[True]]])
    res = value_iterate(m, DacConfig(delta_min=1e-12), gamma=1 - 1e-9)
    np.testing.assert_allclose(res.V, [2.0, 1.0], atol=1e-8)


def test_huge_tolerance_stops_after_one_sweep():
    res = value_iterate(synthetic_mdp(50, 2, 3), DacConfig(delta_min=1e9))
    assert res.iterations == 1 and res.converged


def test_max_iters_cutoff_is_flagged():
    res = value_iterate(synthetic_mdp(50, 2, 3), DacConfig(max_iters=5, delta_min=1e-12))
    assert res.iterations == 5 and not res.converged


def test_dense_oracle_50_states():
    m = synthetic_mdp(50, 3, 4, seed=3, terminal_frac=0.1)
    V_ref, Q_ref = dense_backup_oracle(m, 0.9)
    res = value_iterate(m, DacConfig(delta_min=1e-14, gamma=0.9))
    np.testing.assert_allclose(res.V, V_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(res.Q, Q_ref, rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), A=st.integers(1, 4), k=st.integers(1, 6),
       gamma=st.sampled_from([0.0, 0.5, 0.9, 0.99]), frac=st.sampled_from([0.0, 0.2]))
def test_random_mdps_match_dense_oracle(seed, A, k, gamma, frac):
    m = synthetic_mdp(100, A, k, seed=seed, terminal_frac=frac)
    V_ref, _ = dense_backup_oracle(m, gamma)
    res = value_iterate(m, DacConfig(delta_min=1e-9, gamma=gamma))
    # sup-norm error after stopping is at most gamma * delta / (1 - gamma)
    assert np.abs(res.V - V_ref).max() <= 1e-9 * gamma / (1 - gamma) + 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), threads=st.integers(2, 8))
def test_threads_are_bit_identical(seed, threads):
    m = synthetic_mdp(257, 3, 5, seed=seed, terminal_frac=0.05)
    a = value_iterate(m, DacConfig(delta_min=1e-6))
    b = solve_parallel(m, DacConfig(delta_min=1e-6), threads=threads)
    assert a.v_hash() == b.v_hash() and np.array_equal(a.Q, b.Q)
    assert a.iterations == b.iterations and a.residuals == b.residuals


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_v_is_max_q(seed):
    m = synthetic_mdp(40, 3, 3, seed=seed)
    res = value_iterate(m, DacConfig(delta_min=1e-8))
    # Q is the last backup from the previous V, V the max of that same backup
    np.testing.assert_array_equal(res.V, res.Q.max(axis=1))


def test_residuals_non_increasing_geometrically():
    res = value_iterate(synthetic_mdp(200, 2, 4, seed=9), DacConfig(delta_min=1e-10, gamma=0.95))
    r = np.asarray(res.residuals)
    assert (r[1:] <= 0.95 * r[:-1] + 1e-9).all()


def test_non_finite_model_raises():
    m = synthetic_mdp(10, 2, 2)
    R = m.R.copy()
    R[3, 1] = np.inf
    with pytest.raises(NumericError):
        value_iterate(m.with_arrays(R=R))
    with pytest.raises(NumericError):
        bellman_sweep(m, np.full(10, np.nan))


def test_gamma_one_rejected():
    with pytest.raises(ConfigError, match="gamma"):
        value_iterate(synthetic_mdp(5, 1, 1), gamma=1.0)


def test_bad_threads_rejected():
    with pytest.raises(ConfigError):
        solve_parallel(synthetic_mdp(5, 1, 1), threads=0)


def test_solution_round_trip(tmp_path):
    res = value_iterate(synthetic_mdp(60, 3, 4, seed=2), DacConfig(delta_min=1e-6))
    p = tmp_path / "q.bin"
    save_solution(res, p)
    back = load_solution(p, delta_min=1e-6)
    assert p.read_bytes()[:4] == b"DACQ"
    assert np.array_equal(back.V, res.V) and np.array_equal(back.Q, res.Q)
    assert back.iterations == res.iterations and back.gamma == res.gamma and back.converged


def test_solution_corrupt(tmp_path):
    p = tmp_path / "q.bin"
    save_solution(value_iterate(synthetic_mdp(5, 1, 1)), p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(DataError, match="size"):
        load_solution(p)
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(DataError, match="magic"):
        load_solution(p)
