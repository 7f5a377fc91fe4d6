"""Compile an experience dataset into its finite core-state MDP.

Core states are the distinct destination states of non-terminal tuples. For
every core state ``s`` and action ``a`` the row averages the ``k`` nearest
tuples of action ``a``::

    R(s, a) = sum_i w_i * (r_i - C * d_i)        T(s, a, s'_i) += w_i

with ``w_i = 1/k`` (uniform) or ``w_i`` proportional to ``1 / (d_i + delta_d)``
(weighted). A tuple flagged terminal keeps its probability mass but its
successor slot is value-masked, i.e. it leads to an absorbing zero state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dacmdp.config import DacConfig
from dacmdp.dataset import ExperienceDataset
from dacmdp.errors import DataError, InsufficientSupportError, NumericError
from dacmdp.knn import NeighborIndex, build_index

MDP_MAGIC = b"DACM"
MDP_VERSION = 1
_MDP_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True, eq=False)
class CoreMdp:
    """Sparse finite MDP: ``k`` successor slots per (state, action) row.

    Arrays: ``T_I`` int32 ``(n, A, k)``, ``T_P`` float64 ``(n, A, k)``,
    ``R`` float64 ``(n, A)``, ``terminal_mask`` bool ``(n, A, k)``,
    ``state_vectors`` float32 ``(n, d)``.
    """

    T_I: np.ndarray
    T_P: np.ndarray
    R: np.ndarray
    terminal_mask: np.ndarray
    state_vectors: np.ndarray
    provenance: DacConfig | None = None
    tuple_core: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_states(self) -> int:
        return self.T_I.shape[0]

    @property
    def n_actions(self) -> int:
        return self.T_I.shape[1]

    @property
    def k(self) -> int:
        return self.T_I.shape[2]

    def validate(self, atol: float = 1e-9) -> None:
        n, A, k = self.T_I.shape
        if self.T_P.shape != (n, A, k) or self.terminal_mask.shape != (n, A, k):
            raise DataError("T_I, T_P and terminal_mask shapes disagree")
        if self.R.shape != (n, A):
            raise DataError("R has the wrong shape")
        if n and (self.T_I.min() < 0 or self.T_I.max() >= n):
            raise DataError("successor index out of range")
        if (self.T_P < 0).any():
            raise DataError("negative transition probability")
        sums = self.T_P.sum(axis=2)
        if n and np.abs(sums - 1.0).max() > atol:
            raise DataError(f"rows not stochastic (max deviation {np.abs(sums - 1.0).max():.3g})")
        if not (np.isfinite(self.R).all() and np.isfinite(self.T_P).all()):
            raise NumericError("non-finite entries in MDP")

    def with_arrays(self, **arrays) -> CoreMdp:
        return replace(self, **arrays)

    def equals(self, other: CoreMdp) -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            and getattr(self, f).dtype == getattr(other, f).dtype
            for f in ("T_I", "T_P", "R", "terminal_mask", "state_vectors")
        )


def core_states(ds: ExperienceDataset) -> tuple[np.ndarray, np.ndarray]:
    """``(state_vectors, tuple_core)``.

    Non-terminal destination states are deduplicated on their exact float32
    bit pattern, numbered in order of first appearance. ``tuple_core[i]`` is
    the core index of tuple ``i``'s successor, or -1 for terminal tuples.
    """
    keys = np.ascontiguousarray(ds.next_states).view(np.dtype((np.void, ds.next_states.dtype.itemsize * ds.state_dim))).ravel()
    live = np.flatnonzero(~ds.terminals)
    tuple_core = np.full(len(ds), -1, dtype=np.int64)
    if live.size == 0:
        return np.empty((0, ds.state_dim), dtype=np.float32), tuple_core
    _, first, inverse = np.unique(keys[live], return_index=True, return_inverse=True)
    # renumber unique keys by first appearance
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    tuple_core[live] = rank[inverse.ravel()]
    vectors = ds.next_states[live[first[order]]].copy()
    return vectors, tuple_core


def lookup_core(mdp: CoreMdp, ds: ExperienceDataset) -> np.ndarray:
    """Recover ``tuple_core`` for a dataset compiled (possibly elsewhere) into ``mdp``."""
    if mdp.tuple_core is not None and len(mdp.tuple_core) == len(ds):
        return mdp.tuple_core
    width = ds.state_dim * 4
    table = {mdp.state_vectors[i].tobytes(): i for i in range(mdp.n_states)}
    out = np.full(len(ds), -1, dtype=np.int64)
    for i in np.flatnonzero(~ds.terminals):
        key = ds.next_states[i].tobytes()
        if len(key) != width or key not in table:
            raise DataError(f"tuple {i}'s successor is not a core state of this MDP")
        out[i] = table[key]
    return out


def neighbor_weights(dist: np.ndarray, weighted: bool, delta_d: float) -> np.ndarray:
    """Row-normalized averaging weights for neighbor distance rows."""
    if not weighted:
        return np.full(dist.shape, 1.0 / dist.shape[-1])
    inv = 1.0 / (dist + delta_d)
    return inv / inv.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class NeighborCache:
    """Per-row neighbor data, independent of ``C``.

    Arrays are ``(n_states, A, k)``. Recompiling for another ``C`` reuses them
    without new neighbor queries.
    """

    k: int
    indices: np.ndarray
    distances: np.ndarray
    state_vectors: np.ndarray
    tuple_core: np.ndarray


def build_neighbor_cache(ds: ExperienceDataset, idx: NeighborIndex, k: int) -> NeighborCache:
    vectors, tuple_core = core_states(ds)
    support = ds.action_support()
    short = [a for a, n in enumerate(support) if n < k]
    if short:
        raise InsufficientSupportError(
            f"actions {short} have fewer than k={k} tuples (support {support})"
        )
    n, A = vectors.shape[0], ds.action_count
    indices = np.empty((n, A, k), dtype=np.int64)
    distances = np.empty((n, A, k))
    if n:
        for a in range(A):
            indices[:, a], distances[:, a] = idx.query_batch(vectors, a, k)
    return NeighborCache(k, indices, distances, vectors, tuple_core)


def _merge_duplicates(succ: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Fold the mass of repeated successors into their first slot (in place)."""
    k = succ.shape[-1]
    for j in range(1, k):
        first = np.full(succ.shape[:-1], -1)
        for jj in range(j - 1, -1, -1):
            first = np.where(succ[..., jj] == succ[..., j], jj, first)
        hit = first >= 0
        if hit.any():
            rows = np.nonzero(hit)
            target = first[hit]
            probs[(*rows, target)] += probs[..., j][hit]
            probs[..., j][hit] = 0.0
    return probs


def compile_from_cache(ds: ExperienceDataset, cache: NeighborCache, cfg: DacConfig) -> CoreMdp:
    if cfg.k != cache.k:
        raise DataError(f"cache was built for k={cache.k}, config asks for k={cfg.k}")
    rewards = ds.rewards.astype(np.float64)[cache.indices]
    w = neighbor_weights(cache.distances, cfg.weighted, cfg.delta_d)
    R = (w * (rewards - cfg.C * cache.distances)).sum(axis=-1)
    succ = cache.tuple_core[cache.indices]
    term = succ < 0
    # masked slots point at state 0 and share one merge key
    T_I = np.where(term, 0, succ)
    merge_key = np.where(term, -1, succ)
    T_P = _merge_duplicates(merge_key, w.copy())
    if not (np.isfinite(R).all() and np.isfinite(T_P).all()):
        raise NumericError("non-finite reward or probability during compilation; dataset corrupt?")
    return CoreMdp(
        T_I.astype(np.int32), T_P, R, term, cache.state_vectors, cfg, cache.tuple_core,
    )


def shift_cost(mdp: CoreMdp, cache: NeighborCache, delta_C: float) -> CoreMdp:
    """Move a compiled model from cost ``C`` to ``C + delta_C`` without recompiling."""
    cfg = mdp.provenance
    if cfg is None:
        raise DataError("model has no provenance; cannot tell which weights it was compiled with")
    w = neighbor_weights(cache.distances, cfg.weighted, cfg.delta_d)
    R = mdp.R - delta_C * (w * cache.distances).sum(axis=-1)
    return mdp.with_arrays(R=R, provenance=cfg.with_(C=cfg.C + delta_C))


def compile(ds: ExperienceDataset, idx: NeighborIndex | None = None, cfg: DacConfig | None = None) -> CoreMdp:
    """Compile ``ds`` under ``cfg`` (default hyperparameters when omitted)."""
    cfg = cfg or DacConfig()
    idx = idx if idx is not None else build_index(ds)
    return compile_from_cache(ds, build_neighbor_cache(ds, idx, cfg.k), cfg)


def coverage_stats(ds: ExperienceDataset, idx: NeighborIndex, cfg: DacConfig, queries: str = "sources") -> dict:
    """Mean kNN distance statistics over a finite query set.

    The worst case over the continuous space is not computable; the maximum
    is taken over dataset source pairs ``(s_i, a)`` for every action ``a``
    (``queries="sources"``) or over core states (``"core"``).
    """
    if queries == "sources":
        points = ds.states
    elif queries == "core":
        points = core_states(ds)[0]
    else:
        raise DataError(f"unknown coverage query set {queries!r}")
    means = []
    for a in range(ds.action_count):
        _, dist = idx.query_batch(points, a, cfg.k)
        means.append(dist.mean(axis=1))
    means = np.concatenate(means) if means else np.zeros(0)
    return {
        "d_bar_max": float(means.max()) if means.size else 0.0,
        "d_bar_mean": float(means.mean()) if means.size else 0.0,
        "per_action_support": ds.action_support(),
        "n_queries": int(means.size),
    }


def q_max(Q: np.ndarray) -> float:
    return float(np.max(Q)) if Q.size else 0.0


# -- persistence -----------------------------------------------------------------


def _quantize_probs(T_P: np.ndarray) -> np.ndarray:
    """float32 rows whose float64 sum never exceeds 1.

    Plain rounding can leave a row at ``1 + 6e-8``, which makes the loaded
    Bellman operator expand by that factor; the largest entry of such rows is
    stepped down one float32 ulp at a time until the row fits.
    """
    q = np.array(T_P, dtype=np.float32, order="C")
    flat = q.reshape(-1, q.shape[-1]) if q.size else q.reshape(0, 1)
    for _ in range(64):
        over = np.flatnonzero(flat.astype(np.float64).sum(axis=1) > 1.0)
        if over.size == 0:
            break
        j = flat[over].argmax(axis=1)
        flat[over, j] = np.nextafter(flat[over, j], np.float32(0))
    return q


def save_mdp(mdp: CoreMdp, path: str | Path) -> None:
    """Little-endian ``DACM`` file; probabilities and rewards stored as float32.

    Probability rows are rounded so they never sum above 1 once loaded.

    The state dimension is not in the header; it follows from the length of
    the trailing state-vector block.
    """
    n, A, k = mdp.T_I.shape
    with Path(path).open("wb") as fh:
        fh.write(_MDP_HEADER.pack(MDP_MAGIC, MDP_VERSION, n, A, k))
        fh.write(mdp.T_I.astype("<u4").tobytes())
        fh.write(_quantize_probs(mdp.T_P).astype("<f4").tobytes())
        fh.write(mdp.R.astype("<f4").tobytes())
        fh.write(mdp.terminal_mask.astype("u1").tobytes())
        fh.write(mdp.state_vectors.astype("<f4").tobytes())


def load_mdp(path: str | Path) -> CoreMdp:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such MDP file: {path}")
    raw = path.read_bytes()
    if len(raw) < _MDP_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, n, A, k = _MDP_HEADER.unpack_from(raw, 0)
    if magic != MDP_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} (expected {MDP_MAGIC!r})")
    if version != MDP_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    off = _MDP_HEADER.size
    m = n * A * k

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal off
        size = np.dtype(dtype).itemsize * count
        if off + size > len(raw):
            raise DataError(f"{path}: truncated at offset {off}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += size
        return arr

    T_I = take("<u4", m).astype(np.int32).reshape(n, A, k)
    T_P = take("<f4", m).astype(np.float64).reshape(n, A, k)
    R = take("<f4", n * A).astype(np.float64).reshape(n, A)
    mask = take("u1", m).astype(bool).reshape(n, A, k)
    rest = len(raw) - off
    if n == 0:
        d = 0
    elif rest % (4 * n):
        raise DataError(f"{path}: state-vector block of {rest} bytes does not divide into {n} rows")
    else:
        d = rest // (4 * n)
    vectors = take("<f4", n * d).astype(np.float32).reshape(n, d)
    mdp = CoreMdp(T_I, T_P, R, mask, vectors)
    mdp.validate(atol=1e-5)
    return mdp
