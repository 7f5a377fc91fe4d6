"""Heading-based grid navigation: move forward, turn left, turn right.

Map characters: ``#`` wall, ``.`` free, ``G`` goal, ``B`` bonus obstacle,
``H`` hazard obstacle, ``S`` start. Bonus and hazard cells block movement
like walls but pay their own reward when bumped into.

Observations are float32 ``(x / (W - 1), y / (H - 1), cos(heading), sin(heading))``
with ``y`` growing downwards and headings east, north, west, south.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from dacmdp.errors import DacError, DataError

FORWARD, TURN_LEFT, TURN_RIGHT = 0, 1, 2
ACTION_NAMES = {"FORWARD": 0, "LEFT": 1, "RIGHT": 2}
# east, north, west, south in (dx, dy) with y pointing down
HEADINGS = ((1, 0), (0, -1), (-1, 0), (0, 1))
_HEADING_FEATURES = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))
DEFAULT_HORIZON = 100


@dataclass(frozen=True)
class GridLayout:
    width: int
    height: int
    walls: frozenset
    goal: tuple[int, int]
    bonus_cells: frozenset = frozenset()
    hazard_cells: frozenset = frozenset()
    starts: tuple = ()
    start_heading: int = 1
    goal_reward: float = 1.0
    wall_bump_reward: float = -1.0
    bonus_reward: float = 0.02
    hazard_reward: float = -10.0
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.goal in self.walls or self.goal in self.bonus_cells or self.goal in self.hazard_cells:
            raise DataError("goal cell must be free")
        for r in (self.goal_reward, self.wall_bump_reward, self.bonus_reward, self.hazard_reward):
            if not np.isfinite(r):
                raise DataError("layout rewards must be finite")

    def blocked(self, cell: tuple[int, int]) -> bool:
        x, y = cell
        if not (0 <= x < self.width and 0 <= y < self.height):
            return True
        return cell in self.walls or cell in self.bonus_cells or cell in self.hazard_cells

    @property
    def free_cells(self) -> list[tuple[int, int]]:
        return [
            (x, y) for y in range(self.height) for x in range(self.width) if not self.blocked((x, y))
        ]

    def hazard_adjacent(self) -> set[tuple[int, int]]:
        out = set()
        for hx, hy in self.hazard_cells:
            for dx, dy in HEADINGS:
                c = (hx + dx, hy + dy)
                if not self.blocked(c):
                    out.add(c)
        return out

    @classmethod
    def parse(cls, text: str, name: str = "custom", **rewards) -> GridLayout:
        rows = [line.rstrip("\n") for line in text.strip("\n").splitlines() if line.strip()]
        meta = {}
        grid = []
        for line in rows:
            if line.startswith(";"):
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
            else:
                grid.append(line)
        height, width = len(grid), max(len(r) for r in grid)
        walls, bonus, hazards, starts = set(), set(), set(), []
        goal = None
        for y, row in enumerate(grid):
            for x, ch in enumerate(row.ljust(width, "#")):
                if ch == "#":
                    walls.add((x, y))
                elif ch == "B":
                    bonus.add((x, y))
                elif ch == "H":
                    hazards.add((x, y))
                elif ch == "G":
                    if goal is not None:
                        raise DataError("layout has more than one goal")
                    goal = (x, y)
                elif ch == "S":
                    starts.append((x, y))
                elif ch != ".":
                    raise DataError(f"unknown layout character {ch!r} at ({x}, {y})")
        if goal is None:
            raise DataError("layout has no goal")
        heading = {"E": 0, "N": 1, "W": 2, "S": 3}[meta.get("heading", "N")]
        return cls(
            width, height, frozenset(walls), goal, frozenset(bonus), frozenset(hazards),
            tuple(starts), heading, name=name, **rewards,
        )


SHIPPED_LAYOUTS = ("simple", "box_and_pillar", "tunnel")


def load_layout(name_or_path: str) -> GridLayout:
    """A shipped layout by name, or a map file path."""
    if name_or_path in SHIPPED_LAYOUTS:
        text = resources.files("dacmdp.envs").joinpath("layouts", f"{name_or_path}.txt").read_text()
        return GridLayout.parse(text, name=name_or_path)
    path = Path(name_or_path)
    if not path.exists():
        raise DataError(f"unknown layout {name_or_path!r}")
    return GridLayout.parse(path.read_text(), name=path.stem)


class GridWorld:
    """Grid navigation episode runner.

    ``start_mode="fixed"`` starts from the layout's ``S`` cells (heading from the
    layout); ``"random"`` starts from a uniformly drawn free non-goal cell and
    heading. Layouts without ``S`` cells always start at random.
    """

    name = "gridworld"
    action_count = 3
    obs_dim = 4
    action_names = ACTION_NAMES

    def __init__(
        self,
        layout: GridLayout,
        horizon: int = DEFAULT_HORIZON,
        slip: float = 0.0,
        start_mode: str = "fixed",
        seed: int | None = None,
    ):
        if start_mode not in ("fixed", "random"):
            raise DataError(f"unknown start mode {start_mode!r}")
        self.layout = layout
        self.horizon = horizon
        self.slip = slip
        self.start_mode = start_mode if layout.starts else "random"
        self.rng = np.random.default_rng(seed)
        self._starts = [c for c in layout.free_cells if c != layout.goal]
        self.pos = self._starts[0]
        self.heading = layout.start_heading
        self.step_count = 0
        self.terminated = False
        self._plan = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if self.start_mode == "fixed":
            starts = self.layout.starts
            self.pos = starts[int(self.rng.integers(len(starts)))]
            self.heading = self.layout.start_heading
        else:
            self.pos = self._starts[int(self.rng.integers(len(self._starts)))]
            self.heading = int(self.rng.integers(4))
        self.step_count = 0
        self.terminated = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return encode(self.layout, self.pos, self.heading)

    @property
    def done(self) -> bool:
        return self.terminated or self.step_count >= self.horizon

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise DacError("step() called after the episode ended; call reset()")
        if not 0 <= action < self.action_count:
            raise DacError(f"invalid action {action}")
        if self.slip > 0 and self.rng.random() < self.slip:
            action = int(self.rng.integers(self.action_count))
        self.pos, self.heading, reward, self.terminated = transition(
            self.layout, self.pos, self.heading, action
        )
        self.step_count += 1
        return self.observation(), reward, self.terminated

    def scripted_action(self) -> int:
        """First action of a shortest path to the goal (breadth-first search)."""
        if self._plan is None:
            self._plan = _shortest_path_actions(self.layout)
        return self._plan.get((self.pos, self.heading), FORWARD)


def encode(layout: GridLayout, pos: tuple[int, int], heading: int) -> np.ndarray:
    x, y = pos
    c, s = _HEADING_FEATURES[heading]
    return np.array(
        [x / max(layout.width - 1, 1), y / max(layout.height - 1, 1), c, s], dtype=np.float32
    )


def transition(layout: GridLayout, pos, heading: int, action: int):
    """Deterministic dynamics: ``(pos, heading, reward, terminal)`` after ``action``."""
    if action == TURN_LEFT:
        return pos, (heading + 1) % 4, 0.0, False
    if action == TURN_RIGHT:
        return pos, (heading - 1) % 4, 0.0, False
    dx, dy = HEADINGS[heading]
    nxt = (pos[0] + dx, pos[1] + dy)
    if nxt in layout.hazard_cells:
        return pos, heading, layout.hazard_reward, False
    if nxt in layout.bonus_cells:
        return pos, heading, layout.bonus_reward, False
    if layout.blocked(nxt):
        return pos, heading, layout.wall_bump_reward, False
    if nxt == layout.goal:
        return nxt, heading, layout.goal_reward, True
    return nxt, heading, 0.0, False


def _shortest_path_actions(layout: GridLayout) -> dict:
    # backward BFS from every (goal-adjacent cell, heading) that steps into the goal
    policy: dict = {}
    frontier: deque = deque()
    for h, (dx, dy) in enumerate(HEADINGS):
        cell = (layout.goal[0] - dx, layout.goal[1] - dy)
        if not layout.blocked(cell):
            policy[(cell, h)] = FORWARD
            frontier.append((cell, h))
    while frontier:
        cell, h = frontier.popleft()
        # predecessors: turned into heading h, or moved forward into cell
        for act, prev_h in ((TURN_LEFT, (h - 1) % 4), (TURN_RIGHT, (h + 1) % 4)):
            key = (cell, prev_h)
            if key not in policy:
                policy[key] = act
                frontier.append(key)
        dx, dy = HEADINGS[h]
        prev = (cell[0] - dx, cell[1] - dy)
        if not layout.blocked(prev) and prev != layout.goal and (prev, h) not in policy:
            policy[(prev, h)] = FORWARD
            frontier.append((prev, h))
    return policy
