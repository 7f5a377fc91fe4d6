"""``dacmdp`` command-line entry point.

Every subcommand that writes a file also writes ``<file>.manifest.json`` with
the resolved configuration, input and output hashes and timings.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from dacmdp import __version__
from dacmdp.compiler import compile, coverage_stats, load_mdp, q_max, save_mdp
from dacmdp.config import DacConfig
from dacmdp.dataset import BehaviorPolicy, generate_dataset, load_dataset, save_dataset
from dacmdp.envs import EnvSpec, evaluate_policy
from dacmdp.errors import ConfigError, DacError, DataError
from dacmdp.harness import (
    SweepSpec, candidate_policy_search, default_candidates, file_sha256, run_ablation, run_sweep,
    write_manifest, write_sweep,
)
from dacmdp.knn import build_index
from dacmdp.policy import make_policy
from dacmdp.solver import load_solution, save_solution, solve_parallel, synthetic_mdp
from dacmdp.whatif import ModifierSpec

_CATEGORY = {2: "config", 3: "data", 4: "numeric"}
BENCH_COLUMNS = ("n_states", "n_actions", "k", "threads", "iterations", "wall_time_ms", "residual", "v_hash")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config_args(p: argparse.ArgumentParser, lists: bool = False) -> None:
    d = DacConfig()
    num, whole = (_floats, _ints) if lists else (float, int)
    p.add_argument("--k", type=whole, default=(d.k,) if lists else d.k, help="neighbors per compiled row")
    p.add_argument("--kpi", type=whole, default=(d.k_pi,) if lists else d.k_pi, help="neighbors per decision")
    p.add_argument(
        "--cost", type=num, default=(d.C,) if lists else d.C,
        help="cost per unit neighbor distance; start near the magnitude of observed rewards",
    )
    p.add_argument("--gamma", type=float, default=d.gamma, help="discount, 0 <= gamma < 1")
    p.add_argument("--tol", type=float, default=d.delta_min, help="sup-norm residual to stop at")
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--weighted", action=argparse.BooleanOptionalAction, default=d.weighted,
                   help="inverse-distance neighbor weights")
    p.add_argument("--sknn", action=argparse.BooleanOptionalAction, default=d.sknn,
                   help="one state-level neighbor query per decision")


def _env_args(p: argparse.ArgumentParser, start_mode: str = "fixed") -> None:
    p.add_argument("--env", default="cartpole", choices=("cartpole", "gridworld"))
    p.add_argument("--layout", help="shipped layout name or map file (gridworld)")
    p.add_argument("--horizon", type=int)
    p.add_argument("--slip", type=float, default=0.0, help="environment action-slip probability")
    p.add_argument("--start-mode", default=start_mode, choices=("fixed", "random"))


def _config(args) -> DacConfig:
    return DacConfig(
        k=args.k, C=args.cost, gamma=args.gamma, k_pi=args.kpi, weighted=args.weighted,
        sknn=args.sknn, delta_min=args.tol, max_iters=args.max_iters,
    )


def _env(args) -> EnvSpec:
    return EnvSpec(args.env, args.layout, args.horizon, args.slip, args.start_mode)


def _modifiers(args, action_names: dict | None) -> list[ModifierSpec]:
    return [ModifierSpec.parse(m, action_names) for m in (args.modifier or [])]


def _action_names(args) -> dict:
    try:
        return _env(args).action_names
    except (DacError, AttributeError):
        return {}


def _manifest(out: Path, args, started: float, inputs: list, outputs: list, **extra) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    write_manifest(
        out.with_name(out.name + ".manifest.json"),
        subcommand=args.command,
        version=__version__,
        argv=sys.argv[1:] if args.argv is None else args.argv,
        args=resolved,
        inputs={str(p): file_sha256(p) for p in inputs if p and Path(p).exists()},
        outputs={str(p): file_sha256(p) for p in outputs},
        wall_time_s=time.perf_counter() - started,
        **extra,
    )


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


# -- subcommands -----------------------------------------------------------------


def cmd_gen_data(args) -> None:
    t0 = time.perf_counter()
    if args.out is None:
        raise ConfigError("--out is required")
    env = _env(args).make()
    ds = generate_dataset(env, BehaviorPolicy.parse(args.policy), args.steps, args.seed)
    save_dataset(ds, args.out, args.format)
    _manifest(Path(args.out), args, t0, [], [args.out], env=_env(args).to_dict())
    _print({"tuples": len(ds), "state_dim": ds.state_dim, "action_count": ds.action_count,
            "terminals": int(ds.terminals.sum()), "out": args.out})


def cmd_compile(args) -> None:
    t0 = time.perf_counter()
    if args.data is None or args.out is None:
        raise ConfigError("compile needs --data and --out")
    cfg = _config(args)
    ds = load_dataset(args.data, args.format)
    mdp = compile(ds, build_index(ds), cfg)
    save_mdp(mdp, args.out)
    _manifest(Path(args.out), args, t0, [args.data], [args.out], config=cfg.to_dict())
    _print({"n_states": mdp.n_states, "n_actions": mdp.n_actions, "k": mdp.k, "out": args.out})


def _solve(mdp, cfg: DacConfig, mods: list[ModifierSpec], threads: int):
    gamma = cfg.gamma
    bias = np.zeros(mdp.n_actions)
    for m in mods:
        mdp = m.apply(mdp)
        gamma = m.gamma(gamma)
        bias += m.action_bias(mdp.n_actions)
    cfg = cfg.with_(gamma=gamma)
    return mdp, solve_parallel(mdp, cfg, threads), cfg, bias


def cmd_solve(args) -> None:
    t0 = time.perf_counter()
    if args.mdp is None:
        raise ConfigError("solve needs --mdp")
    cfg = _config(args)
    mdp = load_mdp(args.mdp)
    _, res, cfg, _ = _solve(mdp, cfg, _modifiers(args, _action_names(args)), args.threads)
    summary = {"iterations": res.iterations, "residual": res.residual, "converged": res.converged,
               "wall_time_s": res.wall_time, "q_max": q_max(res.Q), "v_hash": res.v_hash()}
    if args.out:
        save_solution(res, args.out)
        _manifest(Path(args.out), args, t0, [args.mdp], [args.out], config=cfg.to_dict(), result=summary)
    _print(summary)


def _policy_from_args(args):
    if args.data is None:
        raise ConfigError(f"{args.command} needs --data (the dataset the model was compiled from)")
    cfg = _config(args)
    ds = load_dataset(args.data, args.format)
    idx = build_index(ds)
    mdp = load_mdp(args.mdp) if args.mdp else compile(ds, idx, cfg)
    mods = _modifiers(args, _action_names(args))
    if getattr(args, "q", None) and not mods:
        res = load_solution(args.q, cfg.delta_min)
        if res.Q.shape != (mdp.n_states, mdp.n_actions):
            raise DataError("solution file does not match the model's shape")
        bias = np.zeros(mdp.n_actions)
    else:
        mdp, res, cfg, bias = _solve(mdp, cfg, mods, args.threads)
    return make_policy(mdp, res, idx, ds, cfg, action_bias=bias), res, cfg


def _candidate_eval(args, t0: float) -> None:
    """``--ne N``: score the first N default candidates online and report the best."""
    grid = default_candidates(_config(args))
    if not 1 <= args.ne <= len(grid):
        raise ConfigError(f"--ne must be between 1 and {len(grid)}, got {args.ne}")
    configs = [_config(args)] if args.ne == 1 else grid[: args.ne]
    ds = load_dataset(args.data, args.format)
    report = candidate_policy_search(ds, configs, _env(args), args.episodes, args.eps, args.seed, args.threads)
    summary = {"n_e": report.n_e, "best": report.best, "candidates": report.to_rows()}
    if report.best is not None:
        summary["mean_return"] = report.mean_returns[report.best]
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2, default=float) + "\n")
        _manifest(Path(args.out), args, t0, [args.data], [args.out], env=_env(args).to_dict())
    _print(summary)


def cmd_eval(args) -> None:
    t0 = time.perf_counter()
    if args.ne is not None:
        if args.data is None:
            raise ConfigError("eval --ne needs --data")
        return _candidate_eval(args, t0)
    pol, res, cfg = _policy_from_args(args)
    ev = evaluate_policy(_env(args), pol, args.episodes, args.eps, args.seed)
    lo, hi = ev.ci90()
    summary = {"mean_return": ev.mean_return, "std": ev.std, "ci90": [lo, hi], "episodes": ev.episodes,
               "per_episode": ev.per_episode, "solve_iters": res.iterations}
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2) + "\n")
        _manifest(Path(args.out), args, t0, [args.data, args.mdp, args.q], [args.out],
                  config=cfg.to_dict(), env=_env(args).to_dict())
    _print(summary)


def cmd_whatif(args) -> None:
    t0 = time.perf_counter()
    if not args.modifier:
        raise ConfigError("whatif needs at least one --modifier")
    if args.mdp is None:
        raise ConfigError("whatif needs --mdp")
    cfg = _config(args)
    names = _action_names(args)
    mods = _modifiers(args, names)
    mdp, res, cfg, bias = _solve(load_mdp(args.mdp), cfg, mods, args.threads)
    summary = {"modifiers": args.modifier, "gamma": cfg.gamma, "iterations": res.iterations,
               "residual": res.residual, "q_max": q_max(res.Q)}
    outputs = []
    if args.mdp_out:
        save_mdp(mdp, args.mdp_out)
        outputs.append(args.mdp_out)
    if args.data:
        ds = load_dataset(args.data, args.format)
        pol = make_policy(mdp, res, build_index(ds), ds, cfg, action_bias=bias)
        ev = evaluate_policy(_env(args), pol, args.episodes, args.eps, args.seed)
        summary.update(mean_return=ev.mean_return, std=ev.std)
    if args.out:
        save_solution(res, args.out)
        outputs.append(args.out)
        _manifest(Path(args.out), args, t0, [args.mdp, args.data], outputs, config=cfg.to_dict(), result=summary)
    _print(summary)


def _sweep_spec(args) -> SweepSpec:
    datasets = []
    for item in args.data or []:
        name, sep, path = item.partition("=")
        datasets.append((name, path) if sep else (Path(item).stem, item))
    if not datasets:
        raise ConfigError("sweep needs at least one --data NAME=PATH")
    return SweepSpec(
        datasets=tuple(datasets), C=args.cost, k=args.k, k_pi=args.kpi,
        weighted=(args.weighted,), sknn=(args.sknn,), sizes=args.sizes, eps=args.eps,
        seeds=args.seed, episodes=args.episodes, gamma=args.gamma, delta_min=args.tol,
        threads=args.threads, env=_env(args),
    )


def _table_summary(rows) -> list:
    keys = ("dataset", "size", "C", "k", "k_pi", "weighted", "sknn", "eps", "mean_return", "error")
    return [{k: r[k] for k in keys} for r in rows]


def cmd_sweep(args) -> None:
    spec = _sweep_spec(args)
    rows = run_sweep(spec)
    if args.out:
        write_sweep(rows, spec, args.out)
    _print(_table_summary(rows))


def cmd_ablate(args) -> None:
    spec = _sweep_spec(args)
    rows = run_ablation(spec)
    if args.out:
        write_sweep(rows, spec.with_(weighted=(True, False), sknn=(False, True), sizes=(0.1, 1.0)),
                    args.out, kind="ablation")
    _print(_table_summary(rows))


def cmd_bench(args) -> None:
    t0 = time.perf_counter()
    cfg = DacConfig(gamma=args.gamma, delta_min=args.tol, max_iters=args.max_iters)
    mdp = synthetic_mdp(args.states, args.actions, args.k, args.seed)
    rows = []
    for threads in args.threads:
        res = solve_parallel(mdp, cfg, threads)
        rows.append({
            "n_states": args.states, "n_actions": args.actions, "k": args.k, "threads": threads,
            "iterations": res.iterations, "wall_time_ms": round(res.wall_time * 1000, 3),
            "residual": res.residual, "v_hash": res.v_hash(),
        })
        print(",".join(str(rows[-1][c]) for c in BENCH_COLUMNS), file=sys.stderr)
    out = sys.stdout if args.out is None else open(args.out, "w", newline="")
    try:
        writer = csv.DictWriter(out, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out is not None:
            out.close()
    if args.out:
        _manifest(Path(args.out), args, t0, [], [args.out], config=cfg.to_dict())


def cmd_inspect(args) -> None:
    info: dict = {}
    if args.mdp:
        mdp = load_mdp(args.mdp)
        masked = int(mdp.terminal_mask.sum())
        info["mdp"] = {
            "n_states": mdp.n_states, "n_actions": mdp.n_actions, "k": mdp.k,
            "state_dim": int(mdp.state_vectors.shape[1]), "terminal_slots": masked,
            "reward_min": float(mdp.R.min()) if mdp.R.size else 0.0,
            "reward_max": float(mdp.R.max()) if mdp.R.size else 0.0,
        }
    if args.data:
        ds = load_dataset(args.data, args.format)
        cfg = _config(args)
        info["dataset"] = {
            "tuples": len(ds), "state_dim": ds.state_dim, "action_count": ds.action_count,
            "terminals": int(ds.terminals.sum()), "reward_min": float(ds.rewards.min()),
            "reward_max": float(ds.rewards.max()), "metadata": ds.metadata,
            "coverage": coverage_stats(ds, build_index(ds), cfg),
        }
    if not info:
        raise ConfigError("inspect needs --data and/or --mdp")
    _print(info)


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dacmdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="collect a dataset by rolling a behavior policy")
    _env_args(p, start_mode="random")
    p.add_argument("--policy", default="random", help="random, scripted, optimal or mixed[:e1,e2,...]")
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--format", choices=("jsonl", "binary"))
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("compile", help="compile a dataset into a core-state model")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--format", choices=("jsonl", "binary"))
    _config_args(p)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("solve", help="value-iterate a compiled model")
    p.add_argument("--mdp")
    p.add_argument("--out", help="solution file (V and Q, float64)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--modifier", action="append", help="what-if edit applied before solving")
    _config_args(p)
    _env_args(p)
    p.set_defaults(func=cmd_solve)

    for name, fn, text in (
        ("eval", cmd_eval, "evaluate the policy of a dataset's model"),
        ("whatif", cmd_whatif, "edit a compiled model and re-solve it"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--data")
        p.add_argument("--mdp")
        p.add_argument("--out")
        p.add_argument("--format", choices=("jsonl", "binary"))
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--episodes", type=int, default=50)
        p.add_argument("--eps", type=float, default=0.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--modifier", action="append",
                       help="action_penalty:ACTION:PENALTY, discount:GAMMA or slip:PROB")
        _config_args(p)
        _env_args(p)
        if name == "eval":
            p.add_argument("--q", help="solution file to reuse instead of solving")
            p.add_argument("--ne", type=int,
                           help="pick the best of N candidate configurations by online evaluation")
        else:
            p.add_argument("--mdp-out", help="also write the edited model")
        p.set_defaults(func=fn)

    for name, fn, text in (
        ("sweep", cmd_sweep, "compile, solve and evaluate over parameter grids"),
        ("ablate", cmd_ablate, "weighted averaging and state-level kNN on/off at 10%% and 100%% data"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--data", action="append", help="NAME=PATH (repeatable)")
        p.add_argument("--out", help="CSV table")
        p.add_argument("--episodes", type=int, default=50)
        p.add_argument("--eps", type=_floats, default=(0.0,))
        p.add_argument("--seed", type=_ints, default=(0,))
        p.add_argument("--sizes", type=_floats, default=(1.0,))
        p.add_argument("--threads", type=int, default=1)
        _config_args(p, lists=True)
        _env_args(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("bench", help="time value iteration on a synthetic model across thread counts")
    p.add_argument("--states", type=int, default=1_000_000)
    p.add_argument("--actions", type=int, default=5)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--threads", type=_ints, default=(1, 2, 4, 8))
    p.add_argument("--gamma", type=float, default=DacConfig().gamma)
    p.add_argument("--tol", type=float, default=DacConfig().delta_min)
    p.add_argument("--max-iters", type=int, default=DacConfig().max_iters)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV file (stdout when omitted)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="print dataset and model statistics")
    p.add_argument("--data")
    p.add_argument("--mdp")
    p.add_argument("--format", choices=("jsonl", "binary"))
    _config_args(p)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        args.func(args)
    except DacError as exc:
        print(f"error ({_CATEGORY.get(exc.exit_code, 'general')}): {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error (data): {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
