"""Command-line entry point.

Subcommands:

    smoothrl run       penalty-order sweep -> results.csv, tradeoff.csv, manifest
    smoothrl identify  system-identification pipeline on the dollhouse
    smoothrl metrics   recompute metrics from stored trajectory files
    smoothrl tradeoff  re-emit tradeoff.csv from stored per-seed metrics

Exit code 0 on success; on failure a machine-readable JSON error report is
printed to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from .core import fmt_float, load_trajectory
from .envs import DollHouse
from .harness import (
    emit_tradeoff_data,
    identify_dollhouse,
    load_config,
    results_from_per_seed_csv,
    run_experiment,
)
from .metrics import compute_report

METRICS_HEADER = (
    "file,env_id,order,lambda,seed,return_raw,return_shaped,"
    "jerk_std,total_variation,switching_count"
)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="experiment config file (INI sections: experiment/ppo/env)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seeds", default=None, help="comma-separated seed list, e.g. 0,1,2,3,4")
    p.add_argument("--orders", default=None, help="comma-separated penalty orders from {0,1,2,3}")
    p.add_argument("--lambda", dest="lam", default=None, type=float, help="penalty weight")
    p.add_argument("--env", default=None, help="environment id (point_tracker or dollhouse)")
    p.add_argument("--budget", default=None, type=int, help="override total training steps per run")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a penalty-order sweep")
    _add_common_flags(run_p)

    id_p = sub.add_parser("identify", help="identify dollhouse dynamics from logged episodes")
    _add_common_flags(id_p)
    id_p.add_argument("--episodes", type=int, default=10, help="random-policy episodes to log")
    id_p.add_argument("--threshold", type=float, default=0.01, help="sparsity threshold")

    met_p = sub.add_parser("metrics", help="recompute metrics from trajectory files")
    met_p.add_argument("files", nargs="+", help="trajectory files written by this toolkit")
    met_p.add_argument("--out", default=None, help="write metrics.csv here instead of stdout")

    tr_p = sub.add_parser("tradeoff", help="emit tradeoff.csv from stored per-seed metrics")
    tr_p.add_argument("--out", required=True, help="experiment output directory")
    return parser


def _cmd_run(args) -> int:
    config = load_config(
        args.config,
        out=args.out, seeds=args.seeds, orders=args.orders,
        env=args.env, budget=args.budget,
        **{"lambda": args.lam},
    )
    table = run_experiment(config)
    print(f"experiment complete: {config.env_id}, orders {list(config.orders)}, "
          f"{len(config.seeds)} seeds -> {config.out_dir}/results.csv")
    for r in table.rows:
        red = "" if r.jerk_reduction_pct is None else f"  jerk reduction {r.jerk_reduction_pct:.1f}%"
        print(f"  order {r.order}: return {r.return_raw[0]:.2f} +/- {r.return_raw[1]:.2f}, "
              f"jerk_std {r.jerk_std[0]:.4f} +/- {r.jerk_std[1]:.4f}{red}")
    return 0


def _cmd_identify(args) -> int:
    config = load_config(args.config, env="dollhouse", out=args.out)
    seed = 0
    if args.seeds:
        seed = int(args.seeds.split(",")[0])
    report = identify_dollhouse(
        env_overrides=config.env_overrides, episodes=args.episodes,
        seed=seed, threshold=args.threshold,
        out_dir=args.out or config.out_dir,
    )
    print(f"identified from {report.n_samples} samples; "
          f"max coefficient error {report.max_error:.3g}, replay error {report.replay_error:.3g}")
    for key in ("k_out", "k_zone", "k_heat"):
        print(f"  {key}: recovered {report.recovered[key]:.8f} vs true {report.true_values[key]}")
    for w in report.warnings:
        print(f"  warning: {w}")
    return 0


def _cmd_metrics(args) -> int:
    lines = [METRICS_HEADER]
    for path in args.files:
        traj = load_trajectory(path)
        equipment = None
        if traj.env_id == "dollhouse":
            lo, hi = DollHouse.equipment_state_slice
            equipment = traj.states[:, lo:hi] > 0.5
        report = compute_report(traj.actions, traj.env_rewards, traj.shaped_rewards, equipment)
        lines.append(",".join([
            str(path), traj.env_id, str(traj.penalty_order), fmt_float(traj.lam),
            str(traj.seed), fmt_float(report.episode_return_raw),
            fmt_float(report.episode_return_shaped), fmt_float(report.jerk_std),
            fmt_float(report.total_variation), str(report.switching_count),
        ]))
    text = "\n".join(lines) + "\n"
    if args.out:
        import os

        os.makedirs(args.out, exist_ok=True)
        target = os.path.join(args.out, "metrics.csv")
        with open(target, "w", encoding="ascii") as fh:
            fh.write(text)
        print(f"wrote {target}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_tradeoff(args) -> int:
    import os

    per_seed = os.path.join(args.out, "per_seed_metrics.csv")
    table = results_from_per_seed_csv(per_seed)
    target = os.path.join(args.out, "tradeoff.csv")
    emit_tradeoff_data(table, target)
    print(f"wrote {target}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "identify": _cmd_identify,
        "metrics": _cmd_metrics,
        "tradeoff": _cmd_tradeoff,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary, reported as JSON
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
