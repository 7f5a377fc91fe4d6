"""Hyperparameters shared by compilation, solving and acting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

from dacmdp.errors import ConfigError


@dataclass(frozen=True)
class DacConfig:
    """Hyperparameters of a compiled model and its policy.

    Attributes:
        k: neighbors averaged per (state, action) row when compiling.
        C: cost per unit of neighbor distance. A value on the order of the
            observed rewards is a reasonable first guess.
        gamma: discount used by value iteration, ``0 <= gamma < 1``.
        k_pi: neighbors used by the decision-time lookahead.
        weighted: inverse-distance weights instead of uniform ``1/k``.
        sknn: one state-level neighbor query per decision.
        delta_d: regularizer in the inverse-distance weights.
        delta_min: sup-norm residual at which value iteration stops.
        max_iters: hard cap on value-iteration sweeps.
    """

    k: int = 5
    C: float = 1.0
    gamma: float = 0.99
    k_pi: int = 11
    weighted: bool = True
    sknn: bool = False
    delta_d: float = 1e-5
    delta_min: float = 1e-3
    max_iters: int = 100_000

    def __post_init__(self) -> None:
        validate_config(self)

    def with_(self, **changes) -> DacConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> DacConfig:
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        return cls(**known)


def validate_config(cfg: DacConfig) -> None:
    for name in ("C", "gamma", "delta_d", "delta_min"):
        value = getattr(cfg, name)
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{name} must be a finite number, got {value!r}")
    if int(cfg.k) != cfg.k or cfg.k < 1:
        raise ConfigError(f"k must be an integer >= 1, got {cfg.k!r}")
    if int(cfg.k_pi) != cfg.k_pi or cfg.k_pi < 1:
        raise ConfigError(f"k_pi must be an integer >= 1, got {cfg.k_pi!r}")
    if cfg.C < 0:
        raise ConfigError(f"C must be >= 0, got {cfg.C!r}")
    if not 0.0 <= cfg.gamma < 1.0:
        raise ConfigError(f"gamma must satisfy 0 <= gamma < 1 (strictly below 1), got {cfg.gamma!r}")
    if cfg.delta_d <= 0:
        raise ConfigError(f"delta_d must be > 0, got {cfg.delta_d!r}")
    if cfg.delta_min <= 0:
        raise ConfigError(f"delta_min must be > 0, got {cfg.delta_min!r}")
    if int(cfg.max_iters) != cfg.max_iters or cfg.max_iters < 1:
        raise ConfigError(f"max_iters must be an integer >= 1, got {cfg.max_iters!r}")
