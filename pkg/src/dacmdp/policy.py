"""Acting on arbitrary states from a solved core MDP.

Exact mode evaluates the one-step lookahead per action::

    Q(s, a) = sum_i w_i * (r_i + gamma * V(s'_i) - C * d_i) + bias[a]

over the ``k_pi`` nearest tuples of action ``a`` (terminal successors
contribute ``V = 0``). The weights follow the compile-time mode so that, at
core states with ``k_pi = k``, the lookahead reproduces the solved Q table.

State-kNN mode makes one action-agnostic query and scores each action by the
weighted core Q values of the neighbors' successors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dacmdp.compiler import CoreMdp, lookup_core, neighbor_weights
from dacmdp.config import DacConfig
from dacmdp.dataset import ExperienceDataset
from dacmdp.errors import ConfigError, InsufficientSupportError
from dacmdp.knn import NeighborIndex
from dacmdp.solver import SolveResult


@dataclass(frozen=True, eq=False)
class PolicyHandle:
    mdp: CoreMdp
    solve: SolveResult
    idx: NeighborIndex
    ds: ExperienceDataset
    cfg: DacConfig
    action_bias: np.ndarray | None = None
    representation: object | None = None
    tuple_core: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        A = self.mdp.n_actions
        bias = np.zeros(A) if self.action_bias is None else np.asarray(self.action_bias, dtype=np.float64)
        if bias.shape != (A,):
            raise ConfigError(f"action_bias must have {A} entries")
        object.__setattr__(self, "action_bias", bias)
        if self.tuple_core is None:
            object.__setattr__(self, "tuple_core", lookup_core(self.mdp, self.ds))
        # successor value per dataset tuple; masked (terminal) successors are worth 0
        live = self.tuple_core >= 0
        succ_v = np.zeros(len(self.ds))
        succ_v[live] = self.solve.V[self.tuple_core[live]]
        succ_q = np.zeros((len(self.ds), A))
        succ_q[live] = self.solve.Q[self.tuple_core[live]]
        object.__setattr__(self, "_succ_v", succ_v)
        object.__setattr__(self, "_succ_q", succ_q)
        object.__setattr__(self, "_rewards", self.ds.rewards.astype(np.float64))

    def with_bias(self, bias) -> PolicyHandle:
        return PolicyHandle(
            self.mdp, self.solve, self.idx, self.ds, self.cfg, np.asarray(bias, dtype=np.float64),
            self.representation, self.tuple_core,
        )

    def _states(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s)
        if s.ndim == 1:
            s = s[None, :]
        if self.representation is not None:
            s = self.representation.embed(s)
        # queries live in the dataset's float32 lattice
        return s.astype(np.float32).astype(np.float64)

    def q_values_batch(self, states: np.ndarray) -> np.ndarray:
        """``(m, A)`` action scores. Exact mode gives lookahead Q values."""
        S = self._states(states)
        cfg = self.cfg
        A = self.mdp.n_actions
        if cfg.sknn:
            ind, dist = self.idx.query_state_batch(S, cfg.k_pi)
            w = neighbor_weights(dist, cfg.weighted, cfg.delta_d)
            scores = np.einsum("mk,mka->ma", w, self._succ_q[ind])
            return scores + self.action_bias
        out = np.empty((S.shape[0], A))
        for a in range(A):
            ind, dist = self.idx.query_batch(S, a, cfg.k_pi)
            w = neighbor_weights(dist, cfg.weighted, cfg.delta_d)
            backup = self._rewards[ind] + self.solve.gamma * self._succ_v[ind] - cfg.C * dist
            out[:, a] = (w * backup).sum(axis=1)
        return out + self.action_bias

    def q_lookahead(self, s: np.ndarray, a: int) -> float:
        if self.cfg.sknn:
            raise ConfigError("q_lookahead is defined for exact mode; use a config with sknn=False")
        return float(self.q_values_batch(s)[0, a])

    def act_batch(self, states: np.ndarray) -> np.ndarray:
        # argmax picks the lowest index among ties
        return np.argmax(self.q_values_batch(states), axis=1)

    def act_greedy(self, s: np.ndarray) -> int:
        return int(self.act_batch(s)[0])

    def act_eps_greedy(self, s: np.ndarray, eps: float, rng: np.random.Generator) -> int:
        if not 0.0 <= eps <= 1.0:
            raise ConfigError(f"eps must be in [0, 1], got {eps}")
        if eps > 0 and rng.random() < eps:
            return int(rng.integers(self.mdp.n_actions))
        return self.act_greedy(s)

    def __call__(self, s: np.ndarray) -> int:
        return self.act_greedy(s)


def make_policy(
    mdp: CoreMdp,
    solve: SolveResult,
    idx: NeighborIndex,
    ds: ExperienceDataset,
    cfg: DacConfig | None = None,
    action_bias=None,
    representation=None,
) -> PolicyHandle:
    cfg = cfg or mdp.provenance or DacConfig()
    support = ds.action_support()
    limit = len(ds) if cfg.sknn else min(support)
    if cfg.k_pi > limit:
        raise InsufficientSupportError(
            f"k_pi={cfg.k_pi} exceeds available support ({limit}); lower k_pi"
        )
    return PolicyHandle(mdp, solve, idx, ds, cfg, action_bias, representation)
