"""Fixed maps from raw observations to the vectors neighbor search runs on."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dacmdp.dataset import ExperienceDataset
from dacmdp.errors import ConfigError


@dataclass(frozen=True, eq=False)
class Representation:
    """``identity`` or ``random_projection``.

    The projection matrix ``G`` has shape ``(out_dim, in_dim)`` with entries
    drawn once from ``N(0, 1) / sqrt(out_dim)`` using ``seed``; ``out_dim``
    defaults to ``in_dim``.
    """

    kind: str = "identity"
    in_dim: int | None = None
    out_dim: int | None = None
    seed: int = 0
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "random_projection"):
            raise ConfigError(f"unknown representation {self.kind!r}")
        if self.kind == "random_projection":
            if self.in_dim is None or self.in_dim < 1:
                raise ConfigError("random_projection needs in_dim >= 1")
            out = self.in_dim if self.out_dim is None else self.out_dim
            if out < 1:
                raise ConfigError("out_dim must be >= 1")
            rng = np.random.default_rng(self.seed)
            G = rng.standard_normal((out, self.in_dim)) / np.sqrt(out)
            G.flags.writeable = False
            object.__setattr__(self, "out_dim", out)
            object.__setattr__(self, "matrix", G)

    @classmethod
    def identity(cls) -> Representation:
        return cls("identity")

    @classmethod
    def random_projection(cls, in_dim: int, out_dim: int | None = None, seed: int = 0) -> Representation:
        return cls("random_projection", in_dim, out_dim, seed)

    def embed(self, obs: np.ndarray) -> np.ndarray:
        """Map one observation ``(d,)`` or a batch ``(m, d)``; returns float64."""
        x = np.asarray(obs, dtype=np.float64)
        if self.kind == "identity":
            return x.copy()
        if x.shape[-1] != self.in_dim:
            raise ConfigError(f"observation dimension {x.shape[-1]} does not match representation input {self.in_dim}")
        return x @ self.matrix.T

    def to_dict(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim, "seed": self.seed}


def embed(rep: Representation, obs: np.ndarray) -> np.ndarray:
    return rep.embed(obs)


def embed_dataset(rep: Representation, ds: ExperienceDataset) -> ExperienceDataset:
    """Same tuples with states and next states replaced by their embeddings (float32)."""
    out = ds.with_states(
        rep.embed(ds.states).astype(np.float32), rep.embed(ds.next_states).astype(np.float32)
    )
    return out


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-feature affine rescaling fitted on a dataset's source states.

    Not applied anywhere by default. Features with zero spread are left unscaled.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, ds: ExperienceDataset) -> Standardizer:
        s = ds.states.astype(np.float64)
        std = s.std(axis=0)
        return cls(s.mean(axis=0), np.where(std > 0, std, 1.0))

    def embed(self, obs: np.ndarray) -> np.ndarray:
        return (np.asarray(obs, dtype=np.float64) - self.mean) / self.scale
