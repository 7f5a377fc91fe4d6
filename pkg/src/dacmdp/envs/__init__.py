"""Seeded environments and batched policy evaluation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from dacmdp.envs.cartpole import CartPole
from dacmdp.envs.grid import GridLayout, GridWorld, load_layout
from dacmdp.errors import ConfigError

__all__ = [
    "CartPole", "GridLayout", "GridWorld", "EnvSpec", "EvalResult", "evaluate_policy",
    "load_layout", "make_env",
]


@dataclass(frozen=True)
class EnvSpec:
    """Everything needed to build identical, independent environment instances."""

    name: str = "cartpole"
    layout: str | None = None
    horizon: int | None = None
    slip: float = 0.0
    start_mode: str = "fixed"

    def __post_init__(self) -> None:
        if self.name not in ("cartpole", "gridworld"):
            raise ConfigError(f"unknown environment {self.name!r} (expected cartpole or gridworld)")
        if self.name == "gridworld" and not self.layout:
            raise ConfigError("gridworld needs a layout")
        if not 0.0 <= self.slip <= 1.0:
            raise ConfigError(f"slip must be in [0, 1], got {self.slip}")

    def make(self, seed: int | None = None):
        if self.name == "cartpole":
            kw = {} if self.horizon is None else {"horizon": self.horizon}
            return CartPole(slip=self.slip, seed=seed, **kw)
        kw = {} if self.horizon is None else {"horizon": self.horizon}
        return GridWorld(
            load_layout(self.layout), slip=self.slip, start_mode=self.start_mode, seed=seed, **kw
        )

    def with_(self, **changes) -> EnvSpec:
        return EnvSpec(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def action_names(self) -> dict:
        return self.make().action_names


def make_env(name: str, layout: str | None = None, **kw):
    return EnvSpec(name, layout, **kw).make()


@dataclass
class EvalResult:
    mean_return: float
    std: float
    per_episode: list[float]
    terminated: list[bool] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)
    trajectories: list[np.ndarray] | None = None

    @property
    def episodes(self) -> int:
        return len(self.per_episode)

    def ci90(self) -> tuple[float, float]:
        """Normal-approximation 90% confidence interval of the mean return."""
        n = len(self.per_episode)
        half = 1.6448536269514722 * self.std / math.sqrt(n) if n > 1 else 0.0
        return self.mean_return - half, self.mean_return + half


def _greedy_batch(policy, obs: np.ndarray) -> np.ndarray:
    if hasattr(policy, "act_batch"):
        return np.asarray(policy.act_batch(obs))
    return np.array([policy(o) for o in obs])


def evaluate_policy(
    env_spec: EnvSpec,
    policy,
    episodes: int,
    eps: float = 0.0,
    seed: int = 0,
    keep_trajectories: bool = False,
) -> EvalResult:
    """Undiscounted returns of ``episodes`` seeded rollouts.

    ``policy`` is either an object with ``act_batch(observations)`` or a
    callable mapping one observation to an action. Episode ``j`` draws its
    environment and exploration randomness from ``(seed, j)`` only, so results
    do not depend on how episodes are batched and two policies evaluated with
    the same seed face the same start states.
    """
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    if not 0.0 <= eps <= 1.0:
        raise ConfigError(f"eps must be in [0, 1], got {eps}")
    envs, rngs, obs = [], [], []
    for j in range(episodes):
        env_seed, act_seed = np.random.SeedSequence([seed, j]).generate_state(2)
        env = env_spec.make(seed=int(env_seed))
        obs.append(env.reset())
        envs.append(env)
        rngs.append(np.random.default_rng(int(act_seed)))
    returns = np.zeros(episodes)
    trajs = [[o] for o in obs] if keep_trajectories else None
    active = list(range(episodes))
    while active:
        batch = np.stack([obs[j] for j in active])
        greedy = _greedy_batch(policy, batch) if eps < 1.0 else None
        still = []
        for pos, j in enumerate(active):
            env = envs[j]
            if eps > 0 and rngs[j].random() < eps:
                act = int(rngs[j].integers(env.action_count))
            else:
                act = int(greedy[pos])
            o, r, _ = env.step(act)
            returns[j] += r
            obs[j] = o
            if trajs is not None:
                trajs[j].append(o)
            if not env.done:
                still.append(j)
        active = still
    return EvalResult(
        float(returns.mean()),
        float(returns.std(ddof=1)) if episodes > 1 else 0.0,
        returns.tolist(),
        [bool(e.terminated) for e in envs],
        [int(e.step_count) for e in envs],
        [np.stack(t) for t in trajs] if trajs is not None else None,
    )
