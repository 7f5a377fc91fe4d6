"""Exact k-nearest-neighbor queries over dataset source states.

Neighbors are ranked by squared L2 distance, ties broken by the lower dataset
tuple index. Pairs with different actions are infinitely far apart, so the
per-action query only ever sees tuples of that action.

Two backends return identical answers: a chunked brute-force scan, and a
KD-tree whose candidate lists are re-scored with the same arithmetic and
verified against the tree's own radius bound (rows that cannot be verified
fall back to the scan).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from dacmdp.errors import ConfigError, InsufficientSupportError

_AUTO_MIN_POINTS = 512  # partitions at least this large use the tree under "auto"
_CHUNK_ELEMS = 2_000_000
_EXTRA_CANDIDATES = 4
_REL_SLACK = 1e-9


@dataclass(frozen=True)
class NeighborSet:
    indices: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def sq_dists(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Squared distances ``(m, n)``, accumulated column by column.

    The fixed accumulation order makes every entry bit-identical no matter how
    points and queries are batched.
    """
    out = np.zeros((queries.shape[0], points.shape[0]))
    for j in range(points.shape[1]):
        diff = queries[:, j, None] - points[None, :, j]
        out += diff * diff
    return out


def _sq_dists_pairs(points: np.ndarray, queries: np.ndarray, cand: np.ndarray) -> np.ndarray:
    out = np.zeros(cand.shape)
    for j in range(points.shape[1]):
        diff = queries[:, j, None] - points[cand, j]
        out += diff * diff
    return out


def _select_row(d2: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k smallest entries of one row under (value, position) order."""
    if k >= d2.shape[0]:
        return np.argsort(d2, kind="stable")
    kth = np.partition(d2, k - 1)[k - 1]
    cand = np.flatnonzero(d2 <= kth)
    order = np.argsort(d2[cand], kind="stable")
    return cand[order[:k]]


def _brute(points: np.ndarray, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    m, n = queries.shape[0], points.shape[0]
    idx = np.empty((m, k), dtype=np.int64)
    d2 = np.empty((m, k))
    step = max(1, _CHUNK_ELEMS // max(n, 1))
    for lo in range(0, m, step):
        block = sq_dists(points, queries[lo : lo + step])
        if k < n:
            part = np.argpartition(block, k - 1, axis=1)[:, :k]
            kth = np.take_along_axis(block, part, axis=1).max(axis=1)
            ties = (block <= kth[:, None]).sum(axis=1) > k
        else:
            part = np.broadcast_to(np.arange(n), (block.shape[0], n))
            ties = np.zeros(block.shape[0], dtype=bool)
        for r in range(block.shape[0]):
            if ties[r]:
                sel = _select_row(block[r], k)
            else:
                cand = np.sort(part[r])
                sel = cand[np.argsort(block[r, cand], kind="stable")]
            idx[lo + r] = sel
            d2[lo + r] = block[r, sel]
    return idx, d2


def _kdtree(
    tree: cKDTree, points: np.ndarray, queries: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    n = points.shape[0]
    kk = min(n, k + _EXTRA_CANDIDATES)
    kd_dist, cand = tree.query(queries, k=kk)
    if kk == 1:
        kd_dist, cand = kd_dist[:, None], cand[:, None]
    cand = cand.astype(np.int64)
    d2 = _sq_dists_pairs(points, queries, cand)
    order = np.lexsort((cand, d2), axis=-1)[:, :k]
    idx = np.take_along_axis(cand, order, axis=1)
    best = np.take_along_axis(d2, order, axis=1)
    if kk < n:
        # every point outside the candidate list is at least this far away
        bound = kd_dist[:, -1] ** 2 * (1.0 - _REL_SLACK) - 1e-300
        bad = np.flatnonzero(~(best[:, -1] < bound))
        if bad.size:
            fix_idx, fix_d2 = _brute(points, queries[bad], k)
            idx[bad] = fix_idx
            best[bad] = fix_d2
    return idx, best


class _Partition:
    """Point matrix with the dataset indices its rows stand for."""

    def __init__(self, points: np.ndarray, index: np.ndarray, backend: str):
        self.points = points
        self.index = index
        self.tree = cKDTree(points) if backend != "brute" and len(points) else None

    def query(self, queries: np.ndarray, k: int, backend: str) -> tuple[np.ndarray, np.ndarray]:
        n = self.points.shape[0]
        use_tree = self.tree is not None and (
            backend == "kdtree" or n >= _AUTO_MIN_POINTS
        )
        if use_tree:
            local, d2 = _kdtree(self.tree, self.points, queries, k)
        else:
            local, d2 = _brute(self.points, queries, k)
        return self.index[local], np.sqrt(d2)


class NeighborIndex:
    """Per-action and action-agnostic exact kNN over dataset source states.

    ``backend`` is ``"brute"``, ``"kdtree"`` or ``"auto"`` (scan small
    partitions, tree otherwise). All three give identical answers.
    """

    def __init__(self, states: np.ndarray, actions: np.ndarray, action_count: int, backend: str = "auto"):
        if backend not in ("auto", "brute", "kdtree"):
            raise ConfigError(f"unknown kNN backend {backend!r}")
        self.backend = backend
        self.action_count = int(action_count)
        points = np.ascontiguousarray(states, dtype=np.float64)
        self.state_dim = points.shape[1]
        self.size = points.shape[0]
        self.partition = [np.flatnonzero(actions == a) for a in range(self.action_count)]
        self._per_action = [_Partition(points[ix], ix, backend) for ix in self.partition]
        self._global = _Partition(points, np.arange(self.size), backend)

    def support(self, action: int) -> int:
        return len(self.partition[action])

    def _as_queries(self, s: np.ndarray) -> np.ndarray:
        q = np.asarray(s, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        if q.shape[1] != self.state_dim:
            raise ConfigError(f"query dimension {q.shape[1]} does not match index dimension {self.state_dim}")
        return q

    def query_batch(self, queries: np.ndarray, action: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``(indices, distances)``, both ``(m, k)``, for many queries with one action."""
        if not 0 <= action < self.action_count:
            raise ConfigError(f"action {action} out of range")
        if k < 1:
            raise ConfigError("k must be >= 1")
        if self.support(action) < k:
            raise InsufficientSupportError(
                f"action {action} has {self.support(action)} tuples, fewer than k={k}"
            )
        return self._per_action[action].query(self._as_queries(queries), k, self.backend)

    def query_state_batch(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        if k < 1:
            raise ConfigError("k must be >= 1")
        if self.size < k:
            raise InsufficientSupportError(f"dataset has {self.size} tuples, fewer than k={k}")
        return self._global.query(self._as_queries(queries), k, self.backend)


def build_index(ds, backend: str = "auto") -> NeighborIndex:
    return NeighborIndex(ds.states, ds.actions, ds.action_count, backend)


def knn_query(idx: NeighborIndex, s: np.ndarray, a: int, k: int) -> NeighborSet:
    ind, dist = idx.query_batch(np.asarray(s)[None, :], a, k)
    return NeighborSet(ind[0], dist[0])


def knn_query_state(idx: NeighborIndex, s: np.ndarray, k: int) -> NeighborSet:
    ind, dist = idx.query_state_batch(np.asarray(s)[None, :], k)
    return NeighborSet(ind[0], dist[0])
