"""Jacobi value iteration over the sparse core MDP.

Each sweep reads a frozen value vector ``V`` and writes a fresh ``V'``::

    Q'[i, j] = R[i, j] + gamma * sum_s T_P[i, j, s] * V[T_I[i, j, s]]   (unmasked slots)
    V'[i]    = max_j Q'[i, j]
    delta[i] = |V'[i] - V[i]|

States are split into contiguous blocks, one per worker thread. Every state's
arithmetic is the same whatever the split, so results are bit-identical
across thread counts. Sums are accumulated in float64.
"""

from __future__ import annotations

import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from dacmdp.compiler import CoreMdp
from dacmdp.config import DacConfig
from dacmdp.errors import ConfigError, DataError, NumericError

_listeners: list = []


def add_solve_listener(fn) -> None:
    """Call ``fn(result, gamma)`` after every completed solve."""
    _listeners.append(fn)


def remove_solve_listener(fn) -> None:
    if fn in _listeners:
        _listeners.remove(fn)


@dataclass
class SolveResult:
    V: np.ndarray
    Q: np.ndarray
    residual: float
    iterations: int
    wall_time: float
    converged: bool
    gamma: float
    threads: int = 1
    residuals: list[float] = field(default_factory=list, repr=False)

    def v_hash(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.V).tobytes()).hexdigest()[:16]


@njit(nogil=True, cache=True)
def _sweep_block(lo, hi, T_I, T_P, R, mask, V, gamma, V_out, Q_out, delta):
    n_actions = T_I.shape[1]
    k = T_I.shape[2]
    worst = 0.0
    for i in range(lo, hi):
        v_max = -np.inf
        for j in range(n_actions):
            acc = 0.0
            for s in range(k):
                if not mask[i, j, s]:
                    acc += T_P[i, j, s] * V[T_I[i, j, s]]
            q = R[i, j] + gamma * acc
            Q_out[i, j] = q
            if q > v_max:
                v_max = q
        V_out[i] = v_max
        d = abs(v_max - V[i])
        delta[i] = d
        if d > worst or d != d:
            worst = d
    return worst


def _arrays(mdp: CoreMdp):
    return (
        np.ascontiguousarray(mdp.T_I, dtype=np.int32),
        np.ascontiguousarray(mdp.T_P, dtype=np.float64),
        np.ascontiguousarray(mdp.R, dtype=np.float64),
        np.ascontiguousarray(mdp.terminal_mask, dtype=np.bool_),
    )


def _gamma_of(mdp: CoreMdp, gamma: float | None) -> float:
    if gamma is None:
        gamma = mdp.provenance.gamma if mdp.provenance is not None else DacConfig().gamma
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"gamma must satisfy 0 <= gamma < 1, got {gamma}")
    return float(gamma)


def bellman_sweep(mdp: CoreMdp, V_in: np.ndarray, gamma: float | None = None):
    """One Jacobi backup. Returns ``(V_out, Q_out, delta)``."""
    V_in = np.asarray(V_in, dtype=np.float64)
    if V_in.shape != (mdp.n_states,):
        raise ConfigError(f"value vector has shape {V_in.shape}, expected ({mdp.n_states},)")
    if not np.isfinite(V_in).all():
        raise NumericError("non-finite input value vector")
    g = _gamma_of(mdp, gamma)
    n, A = mdp.n_states, mdp.n_actions
    V_out, Q_out, delta = np.empty(n), np.empty((n, A)), np.empty(n)
    _sweep_block(0, n, *_arrays(mdp), V_in, g, V_out, Q_out, delta)
    return V_out, Q_out, delta


def _blocks(n: int, threads: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, threads + 1).astype(np.int64)
    return [(int(edges[t]), int(edges[t + 1])) for t in range(threads)]


def _iterate(mdp: CoreMdp, cfg: DacConfig, threads: int, gamma: float | None) -> SolveResult:
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    g = _gamma_of(mdp, cfg.gamma if gamma is None else gamma)
    T_I, T_P, R, mask = _arrays(mdp)
    n, A = mdp.n_states, mdp.n_actions
    V = np.zeros(n)
    V_next = np.empty(n)
    Q = np.zeros((n, A))
    delta = np.empty(n)
    blocks = _blocks(n, min(threads, max(n, 1)))
    pool = ThreadPoolExecutor(len(blocks)) if len(blocks) > 1 else None
    residuals: list[float] = []
    it = 0
    residual = np.inf
    start = time.perf_counter()
    try:
        while it < cfg.max_iters:
            if pool is None:
                residual = _sweep_block(0, n, T_I, T_P, R, mask, V, g, V_next, Q, delta)
            else:
                futures = [
                    pool.submit(_sweep_block, lo, hi, T_I, T_P, R, mask, V, g, V_next, Q, delta)
                    for lo, hi in blocks
                ]
                residual = max(f.result() for f in futures)
            it += 1
            if not np.isfinite(residual):
                raise NumericError(f"value iteration diverged at sweep {it}")
            residuals.append(float(residual))
            V, V_next = V_next, V
            if residual <= cfg.delta_min:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if n == 0:
        residual = 0.0
    result = SolveResult(
        V=V, Q=Q, residual=float(residual), iterations=it,
        wall_time=time.perf_counter() - start, converged=bool(residual <= cfg.delta_min),
        gamma=g, threads=threads, residuals=residuals,
    )
    for fn in list(_listeners):
        fn(result, g)
    return result


def value_iterate(mdp: CoreMdp, cfg: DacConfig | None = None, gamma: float | None = None) -> SolveResult:
    """Sweep from ``V = 0`` until the sup-norm residual is at most ``cfg.delta_min``.

    Hitting ``cfg.max_iters`` first returns with ``converged=False``.
    ``gamma`` overrides ``cfg.gamma``.
    """
    return _iterate(mdp, cfg or DacConfig(), 1, gamma)


def solve_parallel(
    mdp: CoreMdp, cfg: DacConfig | None = None, threads: int = 1, gamma: float | None = None
) -> SolveResult:
    """``value_iterate`` with each sweep split across ``threads`` workers."""
    return _iterate(mdp, cfg or DacConfig(), threads, gamma)


def synthetic_mdp(
    n_states: int, n_actions: int, k: int, seed: int = 0, terminal_frac: float = 0.0
) -> CoreMdp:
    """Random sparse model for tests and benchmarks.

    Successors are uniform over all states, probabilities are normalized
    uniform draws, rewards are uniform in ``[0, 1)`` and each slot is masked
    terminal with probability ``terminal_frac``.
    """
    if min(n_states, n_actions, k) < 1:
        raise ConfigError("states, actions and k must all be >= 1")
    rng = np.random.default_rng(seed)
    shape = (n_states, n_actions, k)
    T_I = rng.integers(0, n_states, size=shape, dtype=np.int32)
    T_P = rng.random(shape) + 1e-3
    T_P /= T_P.sum(axis=2, keepdims=True)
    R = rng.random((n_states, n_actions))
    mask = rng.random(shape) < terminal_frac if terminal_frac > 0 else np.zeros(shape, dtype=bool)
    vectors = np.arange(n_states, dtype=np.float32)[:, None]
    return CoreMdp(T_I, T_P, R, mask, vectors)


def dense_backup_oracle(mdp: CoreMdp, gamma: float, tol: float = 1e-13, max_iters: int = 1_000_000):
    """Reference solution from dense matrices, for testing.

    Builds ``P[a]`` as dense ``(n, n)`` matrices, iterates the Bellman operator
    to ``tol`` and finishes with an exact policy evaluation of the greedy
    policy. Only suitable for small MDPs.
    """
    n, A, k = mdp.T_I.shape
    P = np.zeros((A, n, n))
    for i in range(n):
        for a in range(A):
            for s in range(k):
                if not mdp.terminal_mask[i, a, s]:
                    P[a, i, mdp.T_I[i, a, s]] += mdp.T_P[i, a, s]
    V = np.zeros(n)
    for _ in range(max_iters):
        Q = mdp.R + gamma * np.einsum("aij,j->ia", P, V)
        V_new = Q.max(axis=1)
        done = np.max(np.abs(V_new - V), initial=0.0) <= tol
        V = V_new
        if done:
            break
    pi = np.argmax(mdp.R + gamma * np.einsum("aij,j->ia", P, V), axis=1)
    P_pi = P[pi, np.arange(n)]
    r_pi = mdp.R[np.arange(n), pi]
    V = np.linalg.solve(np.eye(n) - gamma * P_pi, r_pi)
    Q = mdp.R + gamma * np.einsum("aij,j->ia", P, V)
    return V, Q


# -- persistence -----------------------------------------------------------------

SOLUTION_MAGIC = b"DACQ"
SOLUTION_VERSION = 1
_SOLUTION_HEADER = struct.Struct("<4sIIIIdd")


def save_solution(res: SolveResult, path: str | Path) -> None:
    """Little-endian ``DACQ`` file: header, then ``V`` and ``Q`` as float64."""
    n, A = res.Q.shape
    with Path(path).open("wb") as fh:
        fh.write(_SOLUTION_HEADER.pack(
            SOLUTION_MAGIC, SOLUTION_VERSION, n, A, res.iterations, res.residual, res.gamma
        ))
        fh.write(np.ascontiguousarray(res.V, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(res.Q, dtype="<f8").tobytes())


def load_solution(path: str | Path, delta_min: float | None = None) -> SolveResult:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such solution file: {path}")
    raw = path.read_bytes()
    if len(raw) < _SOLUTION_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, n, A, iters, residual, gamma = _SOLUTION_HEADER.unpack_from(raw, 0)
    if magic != SOLUTION_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} (expected {SOLUTION_MAGIC!r})")
    if version != SOLUTION_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if len(raw) != _SOLUTION_HEADER.size + 8 * (n + n * A):
        raise DataError(f"{path}: size does not match header ({n} states, {A} actions)")
    V = np.frombuffer(raw, "<f8", n, _SOLUTION_HEADER.size).astype(np.float64)
    Q = np.frombuffer(raw, "<f8", n * A, _SOLUTION_HEADER.size + 8 * n).astype(np.float64).reshape(n, A)
    converged = delta_min is None or residual <= delta_min
    return SolveResult(V, Q, residual, iters, 0.0, converged, gamma)
