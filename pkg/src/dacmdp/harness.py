"""Parameter sweeps, candidate-policy selection and ablation tables.

Every row of a sweep is evaluated with the same evaluation seed, so two rows
that differ in one axis face identical start states and their returns are
paired. Neighbor queries are cached per (dataset, size, k) and reused across
the other axes; compiled models are cached per (k, C, weighted).
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from dacmdp.compiler import build_neighbor_cache, compile_from_cache
from dacmdp.config import DacConfig
from dacmdp.dataset import ExperienceDataset, load_dataset
from dacmdp.envs import EnvSpec, evaluate_policy
from dacmdp.errors import ConfigError, DacError
from dacmdp.knn import build_index
from dacmdp.policy import make_policy
from dacmdp.solver import solve_parallel

DEFAULT_EPISODES = 50

COLUMNS = (
    "dataset", "size", "C", "k", "k_pi", "weighted", "sknn", "eps", "gamma", "seed",
    "mean_return", "std", "ci_low", "ci_high", "n_episodes", "solve_iters", "residual",
    "wall_time", "error",
)
_INT_COLS = {"k", "k_pi", "seed", "n_episodes", "solve_iters"}
_BOOL_COLS = {"weighted", "sknn"}
_STR_COLS = {"dataset", "error"}


@dataclass(frozen=True)
class SweepSpec:
    """Axes of a sweep. Every combination becomes one row per (eps, seed)."""

    datasets: tuple[tuple[str, str], ...] = ()
    C: tuple[float, ...] = (1.0,)
    k: tuple[int, ...] = (5,)
    k_pi: tuple[int, ...] = (11,)
    weighted: tuple[bool, ...] = (True,)
    sknn: tuple[bool, ...] = (False,)
    sizes: tuple[float, ...] = (1.0,)
    eps: tuple[float, ...] = (0.0,)
    seeds: tuple[int, ...] = (0,)
    episodes: int = DEFAULT_EPISODES
    gamma: float = 0.99
    delta_min: float = 1e-3
    threads: int = 1
    env: EnvSpec = field(default_factory=EnvSpec)

    def __post_init__(self) -> None:
        for name in ("C", "k", "k_pi", "weighted", "sknn", "sizes", "eps", "seeds"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"sweep axis {name!r} is empty")
            object.__setattr__(self, name, values)
        object.__setattr__(self, "datasets", tuple(tuple(d) for d in self.datasets))
        if any(not 0 < s <= 1 for s in self.sizes):
            raise ConfigError("dataset sizes are fractions in (0, 1]")
        if any(not 0 <= e <= 1 for e in self.eps):
            raise ConfigError("eps values must be in [0, 1]")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        # every combination must be a valid configuration
        for C, k, k_pi in product(self.C, self.k, self.k_pi):
            self.config(C, k, k_pi, True, False)

    def config(self, C: float, k: int, k_pi: int, weighted: bool, sknn: bool) -> DacConfig:
        return DacConfig(
            k=int(k), C=float(C), gamma=self.gamma, k_pi=int(k_pi), weighted=bool(weighted),
            sknn=bool(sknn), delta_min=self.delta_min,
        )

    def with_(self, **changes) -> SweepSpec:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["env"] = self.env.to_dict()
        d["datasets"] = [list(x) for x in self.datasets]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> SweepSpec:
        data = dict(data)
        data["env"] = EnvSpec(**data.get("env", {}))
        data["datasets"] = tuple(tuple(x) for x in data.get("datasets", ()))
        for key in ("C", "k", "k_pi", "weighted", "sknn", "sizes", "eps", "seeds"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def _error_text(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def _row(name, size, cfg: DacConfig, eps, seed) -> dict:
    return {
        "dataset": name, "size": float(size), "C": cfg.C, "k": cfg.k, "k_pi": cfg.k_pi,
        "weighted": cfg.weighted, "sknn": cfg.sknn, "eps": float(eps), "gamma": cfg.gamma,
        "seed": int(seed), "mean_return": float("nan"), "std": float("nan"),
        "ci_low": float("nan"), "ci_high": float("nan"), "n_episodes": 0, "solve_iters": 0,
        "residual": float("nan"), "wall_time": 0.0, "error": "",
    }


def _resolve_datasets(spec: SweepSpec, loaded: dict | None) -> list[tuple[str, ExperienceDataset | Exception]]:
    out = []
    names = [n for n, _ in spec.datasets] or list(loaded or {})
    paths = dict(spec.datasets)
    for name in names:
        if loaded and name in loaded:
            out.append((name, loaded[name]))
            continue
        try:
            out.append((name, load_dataset(paths[name])))
        except (DacError, OSError, KeyError) as exc:
            out.append((name, exc))
    if not out:
        raise ConfigError("sweep has no datasets")
    return out


def run_sweep(spec: SweepSpec, loaded: dict | None = None, cache: bool = True) -> list[dict]:
    """Compile, solve and evaluate every axis combination.

    ``loaded`` maps dataset names to in-memory datasets (overriding paths).
    With ``cache=False`` every row rebuilds its own index and model; the table
    is identical except for ``wall_time``. Failures are recorded in the
    ``error`` column of the affected rows.
    """
    rows: list[dict] = []
    for name, full in _resolve_datasets(spec, loaded):
        for size in spec.sizes:
            rows.extend(_dataset_rows(spec, name, full, size, cache))
    return rows


def _dataset_rows(spec: SweepSpec, name: str, full, size: float, cache: bool) -> list[dict]:
    combos = list(product(spec.k, spec.weighted, spec.C, spec.k_pi, spec.sknn, spec.eps, spec.seeds))
    rows = []
    if isinstance(full, Exception):
        for k, w, C, k_pi, sk, eps, seed in combos:
            row = _row(name, size, spec.config(C, k, k_pi, w, sk), eps, seed)
            row["error"] = _error_text(full)
            rows.append(row)
        return rows
    ds = full if size == 1.0 else full.head(size)
    idx = None
    neighbor_caches: dict = {}
    solved: dict = {}
    for k, w, C, k_pi, sk, eps, seed in combos:
        cfg = spec.config(C, k, k_pi, w, sk)
        row = _row(name, size, cfg, eps, seed)
        rows.append(row)
        try:
            if idx is None or not cache:
                idx = build_index(ds)
            key = (k, w, C)
            if key not in solved or not cache:
                if k not in neighbor_caches or not cache:
                    neighbor_caches[k] = build_neighbor_cache(ds, idx, k)
                t0 = time.perf_counter()
                mdp = compile_from_cache(ds, neighbor_caches[k], cfg)
                res = solve_parallel(mdp, cfg, spec.threads)
                solved[key] = (mdp, res, time.perf_counter() - t0)
            mdp, res, elapsed = solved[key]
            row.update(solve_iters=res.iterations, residual=res.residual, wall_time=elapsed)
            pol = make_policy(mdp, res, idx, ds, cfg)
            t0 = time.perf_counter()
            ev = evaluate_policy(spec.env, pol, spec.episodes, eps, seed)
            lo, hi = ev.ci90()
            row.update(
                mean_return=ev.mean_return, std=ev.std, ci_low=lo, ci_high=hi,
                n_episodes=ev.episodes, wall_time=row["wall_time"] + time.perf_counter() - t0,
            )
        except DacError as exc:
            row["error"] = _error_text(exc)
    return rows


# -- tables ----------------------------------------------------------------------


def write_table(rows: list[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: repr(float(row[c])) if isinstance(row[c], (float, np.floating)) else row[c] for c in COLUMNS})


def read_table(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open(newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for c in COLUMNS:
                v = raw[c]
                if c in _STR_COLS:
                    row[c] = v
                elif c in _BOOL_COLS:
                    row[c] = v == "True"
                elif c in _INT_COLS:
                    row[c] = int(v)
                else:
                    row[c] = float(v)
            rows.append(row)
    return rows


def same_table(a: list[dict], b: list[dict], ignore: tuple[str, ...] = ("wall_time",)) -> bool:
    """Row-wise equality treating NaN as equal to NaN."""
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        for c in COLUMNS:
            if c in ignore:
                continue
            x, y = ra[c], rb[c]
            if isinstance(x, float) and isinstance(y, float) and np.isnan(x) and np.isnan(y):
                continue
            if x != y:
                return False
    return True


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: str | Path, **content) -> None:
    Path(path).write_text(json.dumps(content, indent=2, sort_keys=True, default=str) + "\n")


def write_sweep(rows: list[dict], spec: SweepSpec, out: str | Path, kind: str = "sweep") -> Path:
    """CSV at ``out`` plus ``<out>.manifest.json`` holding the sweep axes and file hashes."""
    out = Path(out)
    write_table(rows, out)
    inputs = {n: file_sha256(p) for n, p in spec.datasets if Path(p).exists()}
    manifest = out.with_name(out.name + ".manifest.json")
    write_manifest(
        manifest, kind=kind, spec=spec.to_dict(), inputs=inputs, outputs={out.name: file_sha256(out)},
    )
    return manifest


# -- candidate selection ---------------------------------------------------------


def default_candidates(base: DacConfig | None = None) -> list[DacConfig]:
    """Six configurations: ``k = 5``, ``C`` in {1, 100, 1e6}, ``k_pi`` in {11, 51}."""
    base = base or DacConfig()
    return [base.with_(k=5, C=C, k_pi=k_pi) for C in (1.0, 100.0, 1e6) for k_pi in (11, 51)]


@dataclass
class CandidateReport:
    configs: list[DacConfig]
    mean_returns: list[float]
    stds: list[float]
    errors: list[str]
    best: int | None

    @property
    def n_e(self) -> int:
        return len(self.configs)

    @property
    def best_config(self) -> DacConfig | None:
        return None if self.best is None else self.configs[self.best]

    def to_rows(self) -> list[dict]:
        return [
            {**c.to_dict(), "mean_return": m, "std": s, "error": e, "best": i == self.best}
            for i, (c, m, s, e) in enumerate(zip(self.configs, self.mean_returns, self.stds, self.errors))
        ]


def candidate_policy_search(
    ds: ExperienceDataset,
    configs: list[DacConfig] | None,
    env: EnvSpec,
    episodes: int = 10,
    eps: float = 0.0,
    seed: int = 0,
    threads: int = 1,
) -> CandidateReport:
    """Evaluate each candidate online and pick the highest mean return.

    Candidates share one index and one neighbor cache per ``k``. Failing
    candidates are reported and never selected.
    """
    configs = list(configs) if configs is not None else default_candidates()
    if not configs:
        raise ConfigError("need at least one candidate configuration")
    idx = build_index(ds)
    caches: dict = {}
    means, stds, errors = [], [], []
    for cfg in configs:
        try:
            if cfg.k not in caches:
                caches[cfg.k] = build_neighbor_cache(ds, idx, cfg.k)
            mdp = compile_from_cache(ds, caches[cfg.k], cfg)
            res = solve_parallel(mdp, cfg, threads)
            ev = evaluate_policy(env, make_policy(mdp, res, idx, ds, cfg), episodes, eps, seed)
            means.append(ev.mean_return)
            stds.append(ev.std)
            errors.append("")
        except DacError as exc:
            means.append(float("nan"))
            stds.append(float("nan"))
            errors.append(_error_text(exc))
    ok = [i for i, e in enumerate(errors) if not e]
    best = max(ok, key=lambda i: (means[i], -i)) if ok else None
    return CandidateReport(configs, means, stds, errors, best)


def run_ablation(spec: SweepSpec, loaded: dict | None = None) -> list[dict]:
    """Weighted averaging and state-level kNN, each on and off, at 10% and 100% data."""
    return run_sweep(
        spec.with_(weighted=(True, False), sknn=(False, True), sizes=(0.1, 1.0)), loaded
    )
