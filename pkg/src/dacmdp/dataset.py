"""Experience datasets: validation, JSONL/binary persistence, generation.

States and rewards are held as float32. Both on-disk formats therefore
round-trip bit-exactly (the binary format stores float32, and JSONL writes
the shortest repr of each float32 value widened to float64).
"""

from __future__ import annotations

import json
import struct
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from dacmdp.errors import DataError

BINARY_MAGIC = b"DACD"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


class ExperienceTuple(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ExperienceDataset:
    """Columnar, immutable collection of ``(s, a, r, s', terminal)`` tuples."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    action_count: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float32)
        next_states = np.asarray(self.next_states, dtype=np.float32)
        if states.ndim != 2 or next_states.shape != states.shape:
            raise DataError(
                f"dimension mismatch: states {states.shape} vs next_states {next_states.shape}"
            )
        n = states.shape[0]
        if n == 0:
            raise DataError("dataset is empty")
        actions = np.asarray(self.actions)
        if actions.shape != (n,) or not np.issubdtype(actions.dtype, np.integer):
            raise DataError("actions must be an integer vector with one entry per tuple")
        actions = actions.astype(np.int64)
        rewards = np.asarray(self.rewards, dtype=np.float32)
        terminals = np.asarray(self.terminals, dtype=bool)
        if rewards.shape != (n,) or terminals.shape != (n,):
            raise DataError("rewards and terminals need one entry per tuple")
        if int(self.action_count) < 1:
            raise DataError(f"action_count must be >= 1, got {self.action_count}")
        bad = np.flatnonzero((actions < 0) | (actions >= self.action_count))
        if bad.size:
            raise DataError(
                f"action out of range at tuple {bad[0]}: a={actions[bad[0]]} "
                f"with action_count={self.action_count}"
            )
        for name, arr in (("state", states), ("reward", rewards), ("next_state", next_states)):
            if not np.all(np.isfinite(arr)):
                row = int(np.flatnonzero(~np.isfinite(arr.reshape(n, -1)).all(axis=1))[0])
                raise DataError(f"non-finite {name} at tuple {row}")
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "next_states", _frozen(next_states))
        object.__setattr__(self, "actions", _frozen(actions))
        object.__setattr__(self, "rewards", _frozen(rewards))
        object.__setattr__(self, "terminals", _frozen(terminals))
        object.__setattr__(self, "action_count", int(self.action_count))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i: int) -> ExperienceTuple:
        return ExperienceTuple(
            self.states[i], int(self.actions[i]), float(self.rewards[i]),
            self.next_states[i], bool(self.terminals[i]),
        )

    def __iter__(self) -> Iterator[ExperienceTuple]:
        for i in range(len(self)):
            yield self[i]

    def same_tuples(self, other: ExperienceDataset) -> bool:
        """Bit-exact equality of tuples, action count and state dimension."""
        return (
            self.action_count == other.action_count
            and self.states.shape == other.states.shape
            and self.states.tobytes() == other.states.tobytes()
            and self.next_states.tobytes() == other.next_states.tobytes()
            and self.rewards.tobytes() == other.rewards.tobytes()
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.terminals, other.terminals)
        )

    def subset(self, rows: Sequence[int] | np.ndarray | slice, **meta) -> ExperienceDataset:
        return ExperienceDataset(
            self.states[rows], self.actions[rows], self.rewards[rows],
            self.next_states[rows], self.terminals[rows], self.action_count,
            {**self.metadata, **meta},
        )

    def head(self, fraction: float) -> ExperienceDataset:
        """The first ``fraction`` of the tuples (at least one)."""
        n = max(1, int(round(len(self) * fraction)))
        return self.subset(slice(0, n), fraction=fraction)

    def with_states(self, states: np.ndarray, next_states: np.ndarray) -> ExperienceDataset:
        return ExperienceDataset(
            states, self.actions, self.rewards, next_states, self.terminals,
            self.action_count, self.metadata,
        )

    def action_support(self) -> list[int]:
        return np.bincount(self.actions, minlength=self.action_count).tolist()


def from_tuples(
    tuples: Sequence[ExperienceTuple | tuple], action_count: int, metadata: dict | None = None
) -> ExperienceDataset:
    if not tuples:
        raise DataError("dataset is empty")
    s, a, r, s2, t = zip(*tuples)
    try:
        states = np.array(s, dtype=np.float32)
        next_states = np.array(s2, dtype=np.float32)
    except ValueError as exc:
        raise DataError(f"dimension mismatch: {exc}") from None
    return ExperienceDataset(
        states, np.array(a, dtype=np.int64), np.array(r, dtype=np.float32),
        next_states, np.array(t, dtype=bool), action_count, metadata or {},
    )


def _clip(ds: ExperienceDataset, clip_rewards: tuple[float, float] | None) -> ExperienceDataset:
    if clip_rewards is None:
        return ds
    lo, hi = clip_rewards
    return ExperienceDataset(
        ds.states, ds.actions, np.clip(ds.rewards, lo, hi), ds.next_states, ds.terminals,
        ds.action_count, {**ds.metadata, "reward_clip": [lo, hi]},
    )


def _format_of(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("jsonl", "binary"):
            raise DataError(f"unknown dataset format {fmt!r} (expected jsonl or binary)")
        return fmt
    if path.suffix in (".jsonl", ".json"):
        return "jsonl"
    return "binary"


# -- JSONL ---------------------------------------------------------------------


def _load_jsonl(path: Path, action_count: int | None) -> ExperienceDataset:
    header: dict = {}
    s, a, r, s2, t = [], [], [], [], []
    dim = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: parse failure: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            if not s and not header and "s" not in rec:
                header = rec
                if "state_dim" in header:
                    dim = int(header["state_dim"])
                continue
            try:
                st, nx = rec["s"], rec["s2"]
                act, rew, term = rec["a"], rec["r"], rec.get("t", False)
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from None
            if dim is None:
                dim = len(st)
            if len(st) != dim or len(nx) != dim:
                raise DataError(
                    f"{path}:{lineno}: dimension mismatch (expected {dim}, "
                    f"got {len(st)} and {len(nx)})"
                )
            if not isinstance(act, int) or isinstance(act, bool):
                raise DataError(f"{path}:{lineno}: action must be an integer")
            if not isinstance(term, bool):
                raise DataError(f"{path}:{lineno}: terminal flag must be a boolean")
            vals = np.asarray([*st, rew, *nx], dtype=np.float64)
            if not np.all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            n_a = action_count if action_count is not None else header.get("action_count")
            if n_a is not None and not 0 <= act < int(n_a):
                raise DataError(f"{path}:{lineno}: action out of range (a={act}, action_count={n_a})")
            s.append(st)
            a.append(act)
            r.append(rew)
            s2.append(nx)
            t.append(term)
    if not s:
        raise DataError(f"{path}: no records")
    n_actions = action_count or header.get("action_count") or (max(a) + 1)
    return ExperienceDataset(
        np.array(s, dtype=np.float32), np.array(a, dtype=np.int64),
        np.array(r, dtype=np.float32), np.array(s2, dtype=np.float32),
        np.array(t, dtype=bool), int(n_actions), header.get("metadata", {}),
    )


def _save_jsonl(ds: ExperienceDataset, path: Path) -> None:
    header = {"action_count": ds.action_count, "state_dim": ds.state_dim}
    if ds.metadata:
        header["metadata"] = ds.metadata
    states = ds.states.astype(np.float64).tolist()
    nexts = ds.next_states.astype(np.float64).tolist()
    rewards = ds.rewards.astype(np.float64).tolist()
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(len(ds)):
            rec = {
                "s": states[i], "a": int(ds.actions[i]), "r": rewards[i],
                "s2": nexts[i], "t": bool(ds.terminals[i]),
            }
            fh.write(json.dumps(rec) + "\n")


# -- binary --------------------------------------------------------------------


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [("s", "<f4", (dim,)), ("a", "<u4"), ("r", "<f4"), ("s2", "<f4", (dim,)), ("t", "u1")]
    )


def _save_binary(ds: ExperienceDataset, path: Path) -> None:
    rec = np.empty(len(ds), dtype=_record_dtype(ds.state_dim))
    rec["s"] = ds.states
    rec["a"] = ds.actions
    rec["r"] = ds.rewards
    rec["s2"] = ds.next_states
    rec["t"] = ds.terminals
    meta = json.dumps(ds.metadata).encode("utf-8") if ds.metadata else b""
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, ds.action_count, ds.state_dim, len(ds)))
        fh.write(rec.tobytes())
        # optional trailer, ignored by readers that stop after the records
        if meta:
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)


def _load_binary(path: Path, action_count: int | None) -> ExperienceDataset:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, n_actions, dim, count = _HEADER.unpack_from(raw, 0)
    if magic != BINARY_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} (expected {BINARY_MAGIC!r})")
    if version != BINARY_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    dtype = _record_dtype(dim)
    end = _HEADER.size + count * dtype.itemsize
    if len(raw) < end:
        raise DataError(f"{path}: truncated at offset {len(raw)} (expected {end} bytes of records)")
    rec = np.frombuffer(raw, dtype=dtype, count=count, offset=_HEADER.size)
    metadata = {}
    if len(raw) >= end + 4:
        (mlen,) = struct.unpack_from("<I", raw, end)
        try:
            metadata = json.loads(raw[end + 4 : end + 4 + mlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise DataError(f"{path}: corrupt metadata trailer at offset {end}") from None
    if rec["t"].max(initial=0) > 1:
        raise DataError(f"{path}: terminal flag must be 0 or 1")
    return ExperienceDataset(
        rec["s"].copy(), rec["a"].astype(np.int64), rec["r"].copy(), rec["s2"].copy(),
        rec["t"].astype(bool), action_count or n_actions, metadata,
    )


def load_dataset(
    path: str | Path,
    format: str | None = None,
    *,
    action_count: int | None = None,
    clip_rewards: tuple[float, float] | None = None,
) -> ExperienceDataset:
    """Load and validate a dataset.

    ``format`` is ``"jsonl"`` or ``"binary"``; when omitted it is inferred from
    the file suffix. ``clip_rewards=(lo, hi)`` clips rewards on ingestion; no
    clipping happens unless asked for.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such dataset file: {path}")
    fmt = _format_of(path, format)
    ds = _load_jsonl(path, action_count) if fmt == "jsonl" else _load_binary(path, action_count)
    return _clip(ds, clip_rewards)


def save_dataset(ds: ExperienceDataset, path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    if _format_of(path, format) == "jsonl":
        _save_jsonl(ds, path)
    else:
        _save_binary(ds, path)


# -- generation ----------------------------------------------------------------

MIXED_BAG_EPSILONS = (0.0, 0.1, 0.2, 0.4, 0.6, 1.0)


@dataclass(frozen=True)
class BehaviorPolicy:
    """Data-collection policy.

    ``random`` acts uniformly; ``scripted`` follows the environment's built-in
    controller; ``mixed`` draws one epsilon per episode from ``eps`` and acts
    epsilon-greedily around the scripted controller.
    """

    kind: str = "random"
    eps: tuple[float, ...] = MIXED_BAG_EPSILONS

    def __post_init__(self) -> None:
        if self.kind not in ("random", "scripted", "mixed"):
            raise DataError(f"unknown behavior policy {self.kind!r}")
        if self.kind == "mixed" and (not self.eps or any(not 0 <= e <= 1 for e in self.eps)):
            raise DataError("mixed policy needs a non-empty list of epsilons in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> BehaviorPolicy:
        """``random``, ``scripted``/``optimal``, or ``mixed[:e1,e2,...]``."""
        name, _, rest = text.partition(":")
        if name == "optimal":
            name = "scripted"
        if name == "mixed" and rest:
            return cls("mixed", tuple(float(x) for x in rest.split(",")))
        return cls(name)


def generate_dataset(env, policy: BehaviorPolicy, steps: int, seed: int) -> ExperienceDataset:
    """Roll episodes in ``env`` until exactly ``steps`` tuples are collected.

    Episodes restart on termination or at the horizon; tuples cut by the
    horizon are not terminal. The result depends only on the arguments.
    """
    if steps < 1:
        raise DataError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    n_actions = env.action_count
    s, a, r, s2, t = [], [], [], [], []
    obs = None
    eps = 1.0
    while len(s) < steps:
        if obs is None or env.done:
            obs = env.reset(int(rng.integers(2**63 - 1)))
            if policy.kind == "mixed":
                eps = float(policy.eps[rng.integers(len(policy.eps))])
            else:
                eps = 1.0 if policy.kind == "random" else 0.0
        if eps > 0 and rng.random() < eps:
            act = int(rng.integers(n_actions))
        else:
            act = int(env.scripted_action())
        nxt, rew, term = env.step(act)
        s.append(obs)
        a.append(act)
        r.append(rew)
        s2.append(nxt)
        t.append(term)
        obs = nxt
    meta = {
        "generator": env.name,
        "policy": policy.kind,
        "seed": int(seed),
        "steps": int(steps),
    }
    if policy.kind == "mixed":
        meta["eps"] = list(policy.eps)
    return ExperienceDataset(
        np.array(s, dtype=np.float32), np.array(a, dtype=np.int64), np.array(r, dtype=np.float32),
        np.array(s2, dtype=np.float32), np.array(t, dtype=bool), n_actions, meta,
    )
