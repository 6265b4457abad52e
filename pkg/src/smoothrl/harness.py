"""Experiment orchestration: penalty-order sweeps, result tables, artifacts.

An experiment runs PPO once per (penalty order, seed) with ONE shared PPO
config (its hash is recorded in the run manifest, proving all orders trained
under identical hyperparameters), aggregates evaluation metrics across seeds,
and writes:

    results.csv            per-order mean +/- std table with reductions
    per_seed_metrics.csv   raw per-(order, seed) metrics the table derives from
    tradeoff.csv           (order, return, smoothness score) for plotting
    manifest.json          config echo, hashes, per-run status
    order*/seed*/          curves, checkpoints, evaluation trajectories

Reported "return" is the RAW environment reward (penalty excluded): shaped
rewards are incommensurable across penalty orders. Shaped returns are logged
alongside. Divergent runs are excluded from aggregates and flagged in the
manifest, never silently dropped.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .core import Trajectory, fmt_float, make_rng
from .envs import ENV_IDS, DollHouseParams, make_env
from .metrics import percent_reduction, summarize
from .smoothing import PenaltyConfig
from .sysid import (
    CoefficientMatrix,
    build_design_matrix,
    default_library,
    save_coefficients,
    simulate_identified,
    stlsq,
)
from .trainer import PpoConfig, TrainingDiverged, train

__all__ = [
    "ExperimentConfig",
    "OrderSummary",
    "ResultsTable",
    "load_config",
    "config_hash",
    "run_experiment",
    "results_from_per_seed_csv",
    "emit_tradeoff_data",
    "IdentificationReport",
    "identify_dollhouse",
    "random_dollhouse_trajectories",
]

RESULTS_COMMENT = (
    "# return = raw env reward (penalty excluded); shaped = raw - penalty\n"
    "# jerk_std = per-episode pooled third-difference population std, averaged over\n"
    "#   eval episodes per seed; mean/std columns are mean and sample std across seeds\n"
)
PER_SEED_HEADER = "env_id,order,lambda,seed,return_raw,return_shaped,jerk_std,switching_count"
RESULTS_HEADER = (
    "env_id,order,lambda,n_seeds,return_raw_mean,return_raw_std,"
    "return_shaped_mean,return_shaped_std,jerk_std_mean,jerk_std_std,"
    "switching_mean,switching_std,jerk_reduction_pct,switching_reduction_pct"
)
TRADEOFF_HEADER = "order,mean_return_raw,smoothness_score,jerk_std,switching_count"

_POINT_TRACKER_OVERRIDE_KEYS = {"max_episode_steps", "dt"}
_DOLLHOUSE_OVERRIDE_KEYS = set(DollHouseParams.__dataclass_fields__) | {"max_episode_steps", "dt"}


@dataclass
class ExperimentConfig:
    """Everything one sweep needs; identical PPO config for every order."""

    env_id: str = "point_tracker"
    orders: tuple[int, ...] = (0, 1, 2, 3)
    lam: float = 0.1
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    env_overrides: dict = field(default_factory=dict)
    out_dir: str = "runs/experiment"
    eval_episodes: int = 5

    def __post_init__(self):
        self.orders = tuple(int(o) for o in self.orders)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.orders:
            raise ValueError("at least one penalty order is required")
        if any(o not in (0, 1, 2, 3) for o in self.orders):
            raise ValueError(f"orders must be a subset of {{0,1,2,3}}, got {self.orders}")
        if len(set(self.orders)) != len(self.orders):
            raise ValueError("orders must be unique")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        if self.env_id not in ENV_IDS:
            raise ValueError(f"unknown env {self.env_id!r}; available: {ENV_IDS}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        allowed = (_DOLLHOUSE_OVERRIDE_KEYS if self.env_id == "dollhouse"
                   else _POINT_TRACKER_OVERRIDE_KEYS)
        unknown = set(self.env_overrides) - allowed
        if unknown:
            raise ValueError(f"unknown [env] keys for {self.env_id}: {sorted(unknown)}")


def _parse_number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok != "")


def load_config(path, **flag_overrides) -> ExperimentConfig:
    """Parse a key/value config file with [experiment], [ppo], [env] sections.

    Unknown sections or keys are errors (they are almost always typos).
    ``flag_overrides`` (CLI flags) take precedence over file values.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        if not parser.read(path):
            raise FileNotFoundError(f"config file not found: {path}")

    known_sections = {"experiment", "ppo", "env"}
    unknown_sections = set(parser.sections()) - known_sections
    if unknown_sections:
        raise ValueError(f"unknown config sections: {sorted(unknown_sections)}")

    exp_keys = {
        "env": str, "orders": _parse_int_list, "lambda": float,
        "seeds": _parse_int_list, "out": str, "eval_episodes": int,
    }
    kwargs: dict = {}
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            if key not in exp_keys:
                raise ValueError(f"unknown [experiment] key: {key}")
            kwargs[key] = exp_keys[key](raw)

    ppo_kwargs: dict = {}
    ppo_field_types = {f.name: f.type for f in fields(PpoConfig)}
    if parser.has_section("ppo"):
        for key, raw in parser.items("ppo"):
            if key not in ppo_field_types:
                raise ValueError(f"unknown [ppo] key: {key}")
            caster = int if ppo_field_types[key] == "int" else float
            ppo_kwargs[key] = caster(raw)

    env_overrides: dict = {}
    if parser.has_section("env"):
        for key, raw in parser.items("env"):
            env_overrides[key] = _parse_number(raw)

    for key, value in flag_overrides.items():
        if value is None:
            continue
        if key == "budget":
            ppo_kwargs["total_steps"] = int(value)
        elif key in ("env", "out"):
            kwargs[key] = value
        elif key in ("orders", "seeds"):
            kwargs[key] = _parse_int_list(value) if isinstance(value, str) else tuple(value)
        elif key == "lambda":
            kwargs["lambda"] = float(value)
        else:
            raise ValueError(f"unknown override {key!r}")

    return ExperimentConfig(
        env_id=kwargs.get("env", "point_tracker"),
        orders=kwargs.get("orders", (0, 1, 2, 3)),
        lam=kwargs.get("lambda", 0.1),
        seeds=kwargs.get("seeds", (0, 1, 2, 3, 4)),
        ppo=PpoConfig(**ppo_kwargs),
        env_overrides=env_overrides,
        out_dir=kwargs.get("out", "runs/experiment"),
        eval_episodes=kwargs.get("eval_episodes", 5),
    )


def config_hash(ppo: PpoConfig) -> str:
    """Canonical hash of the PPO config (fairness proof in the manifest)."""
    canonical = json.dumps(asdict(ppo), sort_keys=True)
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()


@dataclass
class OrderSummary:
    """Cross-seed aggregates for one penalty order."""

    order: int
    n_seeds: int
    return_raw: tuple[float, float]
    return_shaped: tuple[float, float]
    jerk_std: tuple[float, float]
    switching: tuple[float, float]
    jerk_reduction_pct: float | None = None
    switching_reduction_pct: float | None = None


@dataclass
class ResultsTable:
    env_id: str
    lam: float
    rows: list[OrderSummary]
    per_seed: list[dict]

    def row(self, order: int) -> OrderSummary:
        for r in self.rows:
            if r.order == order:
                return r
        raise KeyError(f"no results for order {order}")


def _aggregate(env_id: str, lam: float, per_seed: list[dict]) -> ResultsTable:
    orders = sorted({m["order"] for m in per_seed})
    rows = []
    for order in orders:
        vals = [m for m in per_seed if m["order"] == order]
        rows.append(OrderSummary(
            order=order,
            n_seeds=len(vals),
            return_raw=summarize([m["return_raw"] for m in vals]),
            return_shaped=summarize([m["return_shaped"] for m in vals]),
            jerk_std=summarize([m["jerk_std"] for m in vals]),
            switching=summarize([m["switching_count"] for m in vals]),
        ))
    table = ResultsTable(env_id=env_id, lam=lam, rows=rows, per_seed=per_seed)
    baseline = next((r for r in table.rows if r.order == 0), None)
    if baseline is not None and len(table.rows) > 1:
        for r in table.rows:
            if baseline.jerk_std[0] > 0:
                r.jerk_reduction_pct = percent_reduction(baseline.jerk_std[0], r.jerk_std[0])
            if baseline.switching[0] > 0:
                r.switching_reduction_pct = percent_reduction(
                    baseline.switching[0], r.switching[0]
                )
    return table


def _opt(value: float | None) -> str:
    return "" if value is None else fmt_float(value)


def _write_results_csv(table: ResultsTable, path: str) -> None:
    lines = [RESULTS_COMMENT + RESULTS_HEADER]
    for r in table.rows:
        lines.append(",".join([
            table.env_id, str(r.order), fmt_float(table.lam), str(r.n_seeds),
            fmt_float(r.return_raw[0]), fmt_float(r.return_raw[1]),
            fmt_float(r.return_shaped[0]), fmt_float(r.return_shaped[1]),
            fmt_float(r.jerk_std[0]), fmt_float(r.jerk_std[1]),
            fmt_float(r.switching[0]), fmt_float(r.switching[1]),
            _opt(r.jerk_reduction_pct), _opt(r.switching_reduction_pct),
        ]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_per_seed_csv(per_seed: list[dict], env_id: str, lam: float, path: str) -> None:
    lines = [PER_SEED_HEADER]
    for m in per_seed:
        lines.append(",".join([
            env_id, str(m["order"]), fmt_float(lam), str(m["seed"]),
            fmt_float(m["return_raw"]), fmt_float(m["return_shaped"]),
            fmt_float(m["jerk_std"]), fmt_float(m["switching_count"]),
        ]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def results_from_per_seed_csv(path, env_id: str | None = None) -> ResultsTable:
    """Rebuild a ResultsTable from stored per-seed metrics (exact recompute)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    if not lines or lines[0] != PER_SEED_HEADER:
        raise ValueError(f"{path} is not a per-seed metrics file")
    per_seed = []
    file_env = None
    lam = 0.0
    for ln in lines[1:]:
        toks = ln.split(",")
        file_env = toks[0]
        lam = float(toks[2])
        per_seed.append({
            "order": int(toks[1]), "seed": int(toks[3]),
            "return_raw": float(toks[4]), "return_shaped": float(toks[5]),
            "jerk_std": float(toks[6]), "switching_count": float(toks[7]),
        })
    if not per_seed:
        raise ValueError(f"{path} contains no metric rows")
    return _aggregate(env_id or file_env, lam, per_seed)


def run_experiment(config: ExperimentConfig) -> ResultsTable:
    """Run the (order x seed) sweep and write all artifact files."""
    os.makedirs(config.out_dir, exist_ok=True)
    ppo_hash = config_hash(config.ppo)
    runs = []
    per_seed = []
    for order in sorted(config.orders):
        penalty = PenaltyConfig(order=order, lam=config.lam)
        for seed in sorted(config.seeds):
            run_dir = os.path.join(config.out_dir, f"order{order}", f"seed{seed}")
            record = {"order": order, "seed": seed, "dir": run_dir,
                      "ppo_config_hash": ppo_hash, "status": "ok", "error": None}
            try:
                result = train(
                    config.env_id, penalty, config.ppo, seed,
                    env_overrides=config.env_overrides, out_dir=run_dir,
                    eval_episodes=config.eval_episodes,
                )
            except TrainingDiverged as exc:
                record["status"] = "diverged"
                record["error"] = str(exc)
                runs.append(record)
                continue
            ev = result.final_eval
            per_seed.append({
                "order": order, "seed": seed,
                "return_raw": ev.mean_return_raw,
                "return_shaped": ev.mean_return_shaped,
                "jerk_std": ev.mean_jerk_std,
                "switching_count": ev.mean_switching,
            })
            runs.append(record)

    if not per_seed:
        raise TrainingDiverged("every run diverged; see manifest for details")

    table = _aggregate(config.env_id, config.lam, per_seed)
    _write_per_seed_csv(per_seed, config.env_id, config.lam,
                        os.path.join(config.out_dir, "per_seed_metrics.csv"))
    _write_results_csv(table, os.path.join(config.out_dir, "results.csv"))
    if len(table.rows) >= 2:
        emit_tradeoff_data(table, os.path.join(config.out_dir, "tradeoff.csv"))

    manifest = {
        "toolkit_version": __version__,
        "env_id": config.env_id,
        "lambda": config.lam,
        "orders": list(config.orders),
        "seeds": list(config.seeds),
        "eval_episodes": config.eval_episodes,
        "ppo_config": asdict(config.ppo),
        "ppo_config_hash": ppo_hash,
        "env_overrides": config.env_overrides,
        "runs": runs,
        "excluded_runs": [r for r in runs if r["status"] != "ok"],
    }
    with open(os.path.join(config.out_dir, "manifest.json"), "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return table


def emit_tradeoff_data(results: ResultsTable, path) -> None:
    """Write (order, return, smoothness score) rows for external plotting.

    smoothness_score = 1 / (1 + jerk_std), so "up and to the right" is better
    on a (score, return) scatter; the raw jerk_std is emitted alongside.
    """
    if len(results.rows) < 2:
        raise ValueError("tradeoff data needs results for at least 2 penalty orders")
    lines = ["# smoothness_score = 1/(1+jerk_std); higher = smoother", TRADEOFF_HEADER]
    for r in results.rows:
        score = 1.0 / (1.0 + r.jerk_std[0])
        lines.append(",".join([
            str(r.order), fmt_float(r.return_raw[0]), fmt_float(score),
            fmt_float(r.jerk_std[0]), fmt_float(r.switching[0]),
        ]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# System identification pipeline
# ---------------------------------------------------------------------------

DOLLHOUSE_STATE_NAMES = ("T1", "T2", "T_out", "h1", "h2")
DOLLHOUSE_ACTION_NAMES = ("sp1", "sp2", "damper")
DOLLHOUSE_TARGETS = ("dT1", "dT2")


def random_dollhouse_trajectories(n_episodes: int, seed: int,
                                  env_overrides: dict | None = None) -> list[Trajectory]:
    """Roll random-setpoint episodes for identification logs."""
    from .core import make_transition

    env = make_env("dollhouse", **(env_overrides or {}))
    rng = make_rng(seed)
    trajectories = []
    for _ in range(n_episodes):
        ep_seed = int(rng.integers(2**63))
        obs = env.reset(ep_seed)
        transitions = []
        done = False
        while not done:
            state = obs
            action = rng.uniform(env.spec.action_low, env.spec.action_high)
            obs, reward, done, _info = env.step(action)
            transitions.append(make_transition(state, action, reward, 0.0, done))
        trajectories.append(Trajectory(
            transitions=transitions, seed=ep_seed, env_id="dollhouse",
            penalty_order=0, lam=0.0,
        ))
    return trajectories


@dataclass
class IdentificationReport:
    coefficients: CoefficientMatrix
    true_xi: np.ndarray
    max_error: float
    replay_error: float
    recovered: dict
    true_values: dict
    n_samples: int
    warnings: list[str]


def dollhouse_true_coefficients(params: DollHouseParams, library) -> np.ndarray:
    """The simulator's thermal update written in library coordinates."""
    xi = np.zeros((len(library), len(DOLLHOUSE_TARGETS)))
    names = list(library.names)

    def put(term: str, target: int, value: float):
        xi[names.index(term), target] = value

    for zone, (T_own, T_other, h_own) in enumerate((("T1", "T2", "h1"), ("T2", "T1", "h2"))):
        put("T_out", zone, params.k_out)
        put(T_own, zone, -params.k_out)
        put(h_own, zone, params.k_heat)
        own_damper = f"{T_own}*damper"
        other_damper = f"{T_other}*damper"
        put(own_damper, zone, -params.k_zone)
        put(other_damper, zone, params.k_zone)
    return xi


def identify_dollhouse(env_overrides: dict | None = None, episodes: int = 10,
                       seed: int = 0, threshold: float = 0.01, max_iters: int = 20,
                       out_dir: str | None = None) -> IdentificationReport:
    """Identify the dollhouse thermal coefficients from random-policy logs.

    The thermostat latch and the outdoor sinusoid are structural (known
    actuator/weather mechanisms), so only the zone-temperature rows are
    identified; heater flags enter the library as 0/1 regressors. The report
    includes a replay check on a held-out episode.
    """
    overrides = env_overrides or {}
    params_kw = {k: v for k, v in overrides.items()
                 if k in DollHouseParams.__dataclass_fields__}
    params = DollHouseParams(**params_kw)

    trajectories = random_dollhouse_trajectories(episodes, seed, overrides)
    library = default_library(
        5, 3, state_names=DOLLHOUSE_STATE_NAMES, action_names=DOLLHOUSE_ACTION_NAMES,
        boolean_states=(3, 4),
    )
    theta, targets = build_design_matrix(trajectories, library, target_indices=(0, 1))
    coeffs = stlsq(theta, targets, threshold=threshold, max_iters=max_iters,
                   term_names=library.names, target_names=DOLLHOUSE_TARGETS)

    warnings = []
    if coeffs.is_empty():
        warnings.append(
            f"threshold {threshold} zeroed every coefficient; the identified model is empty"
        )
    if not coeffs.converged:
        warnings.append(f"STLSQ did not converge within {max_iters} iterations")

    true_xi = dollhouse_true_coefficients(params, library)
    max_error = float(np.max(np.abs(coeffs.xi - true_xi)))

    # held-out replay: non-identified state entries follow the log
    val_traj = random_dollhouse_trajectories(1, seed + 1, overrides)[0]
    states = val_traj.states
    actions = val_traj.actions
    horizon = min(100, states.shape[0] - 1)
    predicted = simulate_identified(
        coeffs, library, states[0], actions[:horizon],
        target_indices=(0, 1), exogenous=states[1:horizon + 1],
    )
    replay_error = float(np.max(np.abs(predicted[1:, :2] - states[1:horizon + 1, :2])))

    true_values = {"k_out": params.k_out, "k_zone": params.k_zone, "k_heat": params.k_heat}
    recovered = {
        "k_out": coeffs.coefficient("T_out", "dT1"),
        "k_zone": coeffs.coefficient("T2*damper", "dT1"),
        "k_heat": coeffs.coefficient("h1", "dT1"),
    }
    report = IdentificationReport(
        coefficients=coeffs, true_xi=true_xi, max_error=max_error,
        replay_error=replay_error, recovered=recovered, true_values=true_values,
        n_samples=theta.shape[0], warnings=warnings,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_coefficients(coeffs, os.path.join(out_dir, "coefficients.txt"))
        with open(os.path.join(out_dir, "identification_report.json"), "w",
                  encoding="ascii") as fh:
            json.dump({
                "recovered": recovered, "true_values": true_values,
                "max_error": max_error, "replay_error": replay_error,
                "n_samples": report.n_samples, "warnings": warnings,
                "threshold": threshold, "converged": coeffs.converged,
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report
