from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacmdp.dataset import ExperienceDataset
from dacmdp.errors import ConfigError, InsufficientSupportError
from dacmdp.knn import NeighborIndex, build_index, knn_query, knn_query_state


def oracle(states, actions, q, k, action=None):
    """Sort every candidate by (squared distance, tuple index) and keep k."""
    cand = np.arange(len(states)) if action is None else np.flatnonzero(actions == action)
    d2 = ((states[cand].astype(np.float64) - q) ** 2).sum(axis=1)
    order = np.lexsort((cand, d2))[:k]
    return cand[order], np.sqrt(d2[order])


def make_ds(rng, n, d, A, lattice=False):
    if lattice:
        s = rng.integers(-3, 4, size=(n, d)).astype(np.float32)
    else:
        s = rng.standard_normal((n, d)).astype(np.float32)
    return ExperienceDataset(s, rng.integers(A, size=n), np.zeros(n), s, np.zeros(n, bool), A)


def test_partition_sizes():
    ds = ExperienceDataset([[0.0], [1.0], [2.0]], [0, 0, 1], [0, 0, 0], [[0.0]] * 3, [False] * 3, 2)
    idx = build_index(ds)
    assert [len(p) for p in idx.partition] == [2, 1]


def test_self_match():
    rng = np.random.default_rng(0)
    ds = make_ds(rng, 100, 3, 2)
    idx = build_index(ds)
    for i in (0, 17, 99):
        ns = knn_query(idx, ds.states[i], int(ds.actions[i]), 1)
        assert ns.indices.tolist() == [i] and ns.distances.tolist() == [0.0]
        ns = knn_query_state(idx, ds.states[i], 1)
        assert ns.indices.tolist() == [i] and ns.distances[0] == 0.0


def test_k_equals_support_returns_all():
    rng = np.random.default_rng(1)
    ds = make_ds(rng, 30, 2, 3)
    idx = build_index(ds)
    for a in range(3):
        ns = knn_query(idx, rng.standard_normal(2), a, idx.support(a))
        assert sorted(ns.indices.tolist()) == np.flatnonzero(ds.actions == a).tolist()


def test_insufficient_support():
    ds = ExperienceDataset([[0.0], [1.0]], [0, 1], [0, 0], [[0.0]] * 2, [False] * 2, 2)
    idx = build_index(ds)
    with pytest.raises(InsufficientSupportError):
        knn_query(idx, np.zeros(1), 0, 2)
    with pytest.raises(InsufficientSupportError):
        knn_query_state(idx, np.zeros(1), 3)


def test_bad_backend_and_dimension():
    ds = ExperienceDataset([[0.0]], [0], [0], [[0.0]], [False], 1)
    with pytest.raises(ConfigError):
        NeighborIndex(ds.states, ds.actions, 1, backend="annoy")
    with pytest.raises(ConfigError, match="dimension"):
        knn_query(build_index(ds), np.zeros(2), 0, 1)


@pytest.mark.parametrize("backend", ["brute", "kdtree", "auto"])
@pytest.mark.parametrize("lattice", [False, True])
def test_matches_oracle_1000_points(backend, lattice):
    rng = np.random.default_rng(2)
    ds = make_ds(rng, 1000, 4, 3, lattice)
    idx = build_index(ds, backend)
    queries = rng.integers(-3, 4, size=(500, 4)).astype(float) if lattice else rng.standard_normal((500, 4))
    for a in range(3):
        ind, dist = idx.query_batch(queries, a, 7)
        for q, i, dd in zip(queries, ind, dist):
            oi, od = oracle(ds.states, ds.actions, q, 7, a)
            assert i.tolist() == oi.tolist()
            np.testing.assert_allclose(dd, od, rtol=0, atol=1e-12)
    ind, dist = idx.query_state_batch(queries, 7)
    for q, i in zip(queries, ind):
        assert i.tolist() == oracle(ds.states, ds.actions, q, 7)[0].tolist()


def test_distances_sorted_and_finite():
    rng = np.random.default_rng(3)
    ds = make_ds(rng, 400, 3, 2)
    ind, dist = build_index(ds).query_batch(rng.standard_normal((50, 3)), 1, 9)
    assert np.isfinite(dist).all() and (np.diff(dist, axis=1) >= 0).all() and (dist >= 0).all()


def test_duplicates_fill_several_slots():
    s = np.zeros((4, 2), np.float32)
    ds = ExperienceDataset(s, [0, 0, 0, 0], np.zeros(4), s, np.zeros(4, bool), 1)
    ns = knn_query(build_index(ds), np.zeros(2), 0, 3)
    assert ns.indices.tolist() == [0, 1, 2]


def test_backends_agree_on_ties():
    rng = np.random.default_rng(4)
    ds = make_ds(rng, 3000, 2, 2, lattice=True)
    q = rng.integers(-3, 4, size=(300, 2)).astype(float)
    a = build_index(ds, "brute").query_batch(q, 0, 12)
    b = build_index(ds, "kdtree").query_batch(q, 0, 12)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(5, 200), k=st.integers(1, 5))
def test_permutation_invariance(seed, n, k):
    rng = np.random.default_rng(seed)
    ds = make_ds(rng, n, 3, 1)
    perm = rng.permutation(n)
    ds_p = ExperienceDataset(ds.states[perm], ds.actions[perm], ds.rewards[perm],
                             ds.next_states[perm], ds.terminals[perm], 1)
    q = rng.standard_normal((10, 3))
    a, da = build_index(ds).query_batch(q, 0, k)
    b, db = build_index(ds_p).query_batch(q, 0, k)
    assert np.array_equal(a, perm[b]) and np.array_equal(da, db)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 8))
def test_action_query_dominates_state_query(seed, k):
    rng = np.random.default_rng(seed)
    ds = make_ds(rng, 120, 3, 3)
    idx = build_index(ds)
    q = rng.standard_normal((20, 3))
    _, ds_state = idx.query_state_batch(q, k)
    for a in range(3):
        if idx.support(a) >= k:
            _, ds_a = idx.query_batch(q, a, k)
            assert (ds_a >= ds_state).all()


def test_deterministic():
    rng = np.random.default_rng(5)
    ds = make_ds(rng, 500, 3, 2)
    idx = build_index(ds)
    q = rng.standard_normal((40, 3))
    a = idx.query_batch(q, 1, 5)
    b = idx.query_batch(q, 1, 5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
