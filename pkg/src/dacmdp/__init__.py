"""Offline reinforcement learning by compiling experience datasets into finite
kNN-averager MDPs with distance costs, solving them exactly, and acting on them."""

from __future__ import annotations

__version__ = "0.1.0"

from dacmdp.compiler import CoreMdp, compile, coverage_stats, load_mdp, save_mdp
from dacmdp.config import DacConfig
from dacmdp.dataset import (
    BehaviorPolicy, ExperienceDataset, ExperienceTuple, generate_dataset, load_dataset, save_dataset,
)
from dacmdp.errors import ConfigError, DacError, DataError, InsufficientSupportError, NumericError
from dacmdp.knn import NeighborIndex, build_index, knn_query, knn_query_state
from dacmdp.policy import PolicyHandle, make_policy
from dacmdp.solver import SolveResult, bellman_sweep, solve_parallel, value_iterate

__all__ = [
    "BehaviorPolicy", "ConfigError", "CoreMdp", "DacConfig", "DacError", "DataError",
    "ExperienceDataset", "ExperienceTuple", "InsufficientSupportError", "NeighborIndex",
    "NumericError", "PolicyHandle", "SolveResult", "bellman_sweep", "build_index", "compile",
    "coverage_stats", "generate_dataset", "knn_query", "knn_query_state", "load_dataset",
    "load_mdp", "make_policy", "save_dataset", "save_mdp", "solve_parallel", "value_iterate",
]
