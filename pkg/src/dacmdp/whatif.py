"""Zero-shot edits of a compiled model, each followed by a cheap re-solve.

All functions are pure: they return new models and never touch their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dacmdp.compiler import CoreMdp
from dacmdp.config import DacConfig
from dacmdp.errors import ConfigError
from dacmdp.solver import SolveResult, value_iterate

MODIFIER_KINDS = ("action_penalty", "discount", "slip")


@dataclass(frozen=True)
class ModifierSpec:
    """One what-if edit.

    ``action_penalty`` subtracts ``value`` from every reward of ``action``;
    ``discount`` re-solves with ``gamma = value``; ``slip`` mixes every row with
    the uniform-random-action row at probability ``value``.
    """

    kind: str
    value: float
    action: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in MODIFIER_KINDS:
            raise ConfigError(f"unknown modifier {self.kind!r} (expected one of {', '.join(MODIFIER_KINDS)})")
        if not math.isfinite(self.value):
            raise ConfigError(f"modifier value must be finite, got {self.value!r}")
        if self.kind == "action_penalty" and (self.action is None or self.action < 0):
            raise ConfigError("action_penalty needs a non-negative action")
        if self.kind == "discount" and not 0.0 <= self.value < 1.0:
            raise ConfigError(f"discount must satisfy 0 <= gamma < 1 (strictly below 1), got {self.value}")
        if self.kind == "slip" and not 0.0 <= self.value <= 1.0:
            raise ConfigError(f"slip probability must be in [0, 1], got {self.value}")

    @classmethod
    def parse(cls, text: str, action_names: dict[str, int] | None = None) -> ModifierSpec:
        """``action_penalty:LEFT:1e6``, ``action_penalty:1:1e6``, ``discount:0.995`` or ``slip:0.1``."""
        parts = text.split(":")
        kind = parts[0]
        try:
            if kind == "action_penalty" and len(parts) == 3:
                name = parts[1]
                names = {k.upper(): v for k, v in (action_names or {}).items()}
                if name.upper() in names:
                    action = names[name.upper()]
                elif name.isdigit():
                    action = int(name)
                else:
                    known = ", ".join(sorted(names)) or "integer indices"
                    raise ConfigError(f"unknown action {name!r} (known: {known})")
                return cls(kind, float(parts[2]), action)
            if kind in ("discount", "slip") and len(parts) == 2:
                return cls(kind, float(parts[1]))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"cannot parse modifier {text!r}: {exc}") from None
        raise ConfigError(
            f"cannot parse modifier {text!r}; expected action_penalty:ACTION:PENALTY, discount:GAMMA or slip:PROB"
        )

    def apply(self, mdp: CoreMdp) -> CoreMdp:
        """The edited model (``discount`` leaves the model unchanged)."""
        if self.kind == "action_penalty":
            return apply_action_penalty(mdp, self.action, self.value)
        if self.kind == "slip":
            return apply_slip(mdp, self.value)
        return mdp.with_arrays()

    def action_bias(self, n_actions: int) -> np.ndarray:
        """Per-action offset a policy needs so its lookahead sees the edited rewards."""
        bias = np.zeros(n_actions)
        if self.kind == "action_penalty":
            bias[self.action] = -self.value
        return bias

    def gamma(self, default: float) -> float:
        return self.value if self.kind == "discount" else default


def apply_action_penalty(mdp: CoreMdp, a: int, penalty: float) -> CoreMdp:
    if not 0 <= a < mdp.n_actions:
        raise ConfigError(f"action {a} out of range for {mdp.n_actions} actions")
    if not math.isfinite(penalty):
        raise ConfigError("penalty must be finite")
    R = mdp.R.copy()
    R[:, a] -= penalty
    return mdp.with_arrays(R=R)


def resolve_with_discount(mdp: CoreMdp, gamma: float, cfg: DacConfig | None = None) -> SolveResult:
    """Solve the unchanged model again under another discount."""
    return value_iterate(mdp, cfg or mdp.provenance, gamma=gamma)


def apply_slip(mdp: CoreMdp, rho: float) -> CoreMdp:
    """Row ``(s, a)`` becomes ``(1 - rho) * row(s, a) + rho / |A| * sum_b row(s, b)``.

    Rewards and transitions are mixed alike. The result has ``|A| * k`` slots
    per row, grouped by source action ``b``; ``rho = 0`` returns an unchanged copy.
    """
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"slip probability must be in [0, 1], got {rho}")
    if rho == 0.0:
        return mdp.with_arrays(
            T_I=mdp.T_I.copy(), T_P=mdp.T_P.copy(), R=mdp.R.copy(), terminal_mask=mdp.terminal_mask.copy()
        )
    n, A, k = mdp.T_I.shape
    # mix[a, b]: weight of source row b inside new row a
    mix = np.full((A, A), rho / A) + (1.0 - rho) * np.eye(A)
    T_I = np.broadcast_to(mdp.T_I.reshape(n, 1, A * k), (n, A, A * k)).copy()
    mask = np.broadcast_to(mdp.terminal_mask.reshape(n, 1, A * k), (n, A, A * k)).copy()
    T_P = (mix[None, :, :, None] * mdp.T_P[:, None, :, :]).reshape(n, A, A * k)
    T_P /= T_P.sum(axis=2, keepdims=True)
    R = mdp.R @ mix.T
    return mdp.with_arrays(T_I=T_I, T_P=T_P, R=R, terminal_mask=mask)
