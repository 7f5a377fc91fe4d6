"""Cart-pole balancing with the classic benchmark constants (Euler integration)."""

from __future__ import annotations

import math

import numpy as np

from dacmdp.errors import DacError

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLEMASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE_MAG = 10.0
TAU = 0.02
THETA_THRESHOLD = 12 * 2 * math.pi / 360
X_THRESHOLD = 2.4
DEFAULT_HORIZON = 500

ACTION_NAMES = {"LEFT": 0, "RIGHT": 1}

# state-feedback gains of the scripted controller (x, x_dot, theta, theta_dot)
_CONTROLLER_GAINS = np.array([0.1, 0.5, 10.0, 2.0])


def dynamics(state: np.ndarray, action: int) -> np.ndarray:
    """One Euler step of the cart-pole ODE; returns the new float64 state."""
    x, x_dot, theta, theta_dot = state
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    costheta = math.cos(theta)
    sintheta = math.sin(theta)
    temp = (force + POLEMASS_LENGTH * theta_dot**2 * sintheta) / TOTAL_MASS
    thetaacc = (GRAVITY * sintheta - costheta * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * costheta**2 / TOTAL_MASS)
    )
    xacc = temp - POLEMASS_LENGTH * thetaacc * costheta / TOTAL_MASS
    return np.array([
        x + TAU * x_dot,
        x_dot + TAU * xacc,
        theta + TAU * theta_dot,
        theta_dot + TAU * thetaacc,
    ])


def scripted_action(obs: np.ndarray) -> int:
    """Linear state-feedback balancing rule; keeps the pole up for the full horizon."""
    return int(float(np.dot(_CONTROLLER_GAINS, obs)) > 0.0)


class CartPole:
    """Pole balancing: reward +1 per step, terminal when the pole or cart leaves bounds.

    Observations are float32 ``(x, x_dot, theta, theta_dot)``.
    """

    name = "cartpole"
    action_count = 2
    obs_dim = 4
    action_names = ACTION_NAMES

    def __init__(self, horizon: int = DEFAULT_HORIZON, slip: float = 0.0, seed: int | None = None):
        self.horizon = horizon
        self.slip = slip
        self.rng = np.random.default_rng(seed)
        self.state = np.zeros(4)
        self.step_count = 0
        self.terminated = False

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        self.step_count = 0
        self.terminated = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return self.state.astype(np.float32)

    @property
    def done(self) -> bool:
        return self.terminated or self.step_count >= self.horizon

    def scripted_action(self) -> int:
        return scripted_action(self.state)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise DacError("step() called after the episode ended; call reset()")
        if not 0 <= action < self.action_count:
            raise DacError(f"invalid action {action}")
        if self.slip > 0 and self.rng.random() < self.slip:
            action = int(self.rng.integers(self.action_count))
        self.state = dynamics(self.state, action)
        self.step_count += 1
        x, _, theta, _ = self.state
        self.terminated = bool(abs(x) > X_THRESHOLD or abs(theta) > THETA_THRESHOLD)
        return self.observation(), 1.0, self.terminated
