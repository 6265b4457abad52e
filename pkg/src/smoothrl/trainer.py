"""PPO-clip training over penalty-wrapped environments.

One training run is a pure function of (env id, penalty config, PPO config,
seed): rollout sampling, network initialization, minibatch shuffling, and
episode seeding all derive from the single run seed, so reruns are
bit-identical. Evaluation episodes use the deterministic mean action on a
separate env instance with fixed derived seeds; smoothness metrics are
computed on those evaluation episodes, never on exploration rollouts, so
sampling noise does not contaminate jerk measurements.

Rewards: the GAE recursion consumes shaped rewards (that is the objective
being optimized); raw env rewards are logged alongside for reporting.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core import Trajectory, fmt_float, make_rng, make_transition, save_trajectory
from .envs import make_env
from .metrics import SmoothnessReport, compute_report, summarize
from .nn import (
    GaussianPolicy,
    MlpParams,
    Tensor,
    adam_init,
    adam_step,
    forward,
    grad,
    init_mlp,
    minimum,
    mlp_arch,
    mlp_tensor,
)
from .smoothing import PenaltyConfig, wrap_env

__all__ = [
    "PpoConfig",
    "RolloutBatch",
    "UpdateDiagnostics",
    "TrainingDiverged",
    "TrainResult",
    "EvalSummary",
    "collect_rollout",
    "compute_gae",
    "normalize_advantages",
    "ppo_update",
    "evaluate_policy",
    "train",
]

CURVE_HEADER = "step,mean_eval_return_raw,mean_eval_return_shaped,jerk_std,switching_count"


class TrainingDiverged(RuntimeError):
    """Raised when a loss, gradient, or parameter vector goes non-finite."""


@dataclass(frozen=True)
class PpoConfig:
    """Clipped-surrogate PPO hyperparameters, frozen across penalty orders."""

    total_steps: int = 100_000
    rollout_len: int = 2048
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if self.rollout_len < 4:
            raise ValueError("rollout_len must be >= 4")
        if not 1 <= self.minibatch_size <= self.rollout_len:
            raise ValueError("minibatch_size must be in [1, rollout_len]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be > 0")
        if self.total_steps < self.rollout_len:
            raise ValueError("total_steps must be >= rollout_len")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class RolloutBatch:
    """Aligned per-step arrays from one on-policy collection pass.

    ``actions`` holds the pre-clip Gaussian samples (the quantity whose log
    probability defines the PPO ratio); the env wrapper clips before penalty
    computation and stepping.
    """

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    env_rewards: np.ndarray
    shaped_rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return self.observations.shape[0]


@dataclass(frozen=True)
class UpdateDiagnostics:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def _value_of(value: MlpParams, obs) -> float:
    return float(forward(value, obs)[0])


def collect_rollout(env, policy: GaussianPolicy, value: MlpParams, length: int,
                    rng: np.random.Generator, start_obs=None):
    """Collect ``length`` steps, resetting on episode ends.

    Returns (batch, last_obs); episode reset seeds are drawn from ``rng``.
    With ``start_obs=None`` the env is reset first.
    """
    n_obs = env.spec.state_dim
    d = env.spec.action_dim
    obs_buf = np.zeros((length, n_obs))
    act_buf = np.zeros((length, d))
    logp_buf = np.zeros(length)
    env_r_buf = np.zeros(length)
    shaped_r_buf = np.zeros(length)
    value_buf = np.zeros(length)
    done_buf = np.zeros(length)

    obs = env.reset(int(rng.integers(2**63))) if start_obs is None else start_obs
    for t in range(length):
        obs_buf[t] = obs
        value_buf[t] = _value_of(value, obs)
        action = policy.sample(obs, rng)
        act_buf[t] = action
        logp_buf[t] = policy.log_prob(obs, action)
        obs, shaped, done, info = env.step(action)
        env_r_buf[t] = info["env_reward"]
        shaped_r_buf[t] = shaped
        done_buf[t] = float(done)
        if done:
            obs = env.reset(int(rng.integers(2**63)))
    batch = RolloutBatch(
        observations=obs_buf, actions=act_buf, log_probs=logp_buf,
        env_rewards=env_r_buf, shaped_rewards=shaped_r_buf,
        values=value_buf, dones=done_buf,
    )
    return batch, obs


def compute_gae(rewards, values, dones, bootstrap_value: float,
                gamma: float, lam: float):
    """Generalized advantage estimation by the standard reverse recursion.

    delta_t = r_t + gamma*(1-done_t)*V_{t+1} - V_t with V_T = bootstrap_value;
    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}; returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError(
            f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}"
        )
    T = rewards.shape[0]
    advantages = np.zeros(T)
    last_adv = 0.0
    next_value = float(bootstrap_value)
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * nonterminal * next_value - values[t]
        last_adv = delta + gamma * lam * nonterminal * last_adv
        advantages[t] = last_adv
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Shift/scale to mean 0, std 1 (exact division; zeros if degenerate)."""
    centered = adv - np.mean(adv)
    std = np.std(centered)
    if std == 0.0:
        return np.zeros_like(adv)
    return centered / std


def ppo_update(policy: GaussianPolicy, value: MlpParams, batch: RolloutBatch,
               config: PpoConfig, rng: np.random.Generator,
               policy_opt, value_opt):
    """Run the clipped-surrogate update epochs over one batch.

    Returns (policy, value, policy_opt, value_opt, diagnostics). The total
    objective is policy_loss + value_coef * value_mse - entropy_coef *
    entropy; its gradient is clipped to ``max_grad_norm`` (global norm over
    both networks) before separate Adam steps.
    """
    if batch.advantages is None or batch.returns is None:
        raise ValueError("batch advantages/returns must be computed before ppo_update")
    L = len(batch)
    diag_sums = np.zeros(5)
    n_minibatches = 0

    for _epoch in range(config.epochs):
        perm = rng.permutation(L)
        for start in range(0, L, config.minibatch_size):
            idx = perm[start:start + config.minibatch_size]
            obs_mb = batch.observations[idx]
            act_mb = batch.actions[idx]
            old_logp_mb = batch.log_probs[idx]
            adv_mb = batch.advantages[idx]
            ret_mb = batch.returns[idx]

            captured = {}

            def policy_loss_fn(leaf: Tensor) -> Tensor:
                logp_new = policy.log_prob_tensor(leaf, obs_mb, act_mb)
                ratio = (logp_new - old_logp_mb).exp()
                surr1 = ratio * adv_mb
                surr2 = ratio.clip(1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv_mb
                pg_loss = -(minimum(surr1, surr2).mean())
                captured["ratio"] = ratio.data
                captured["logp_new"] = logp_new.data
                captured["pg_loss"] = float(pg_loss.data)
                entropy = policy.entropy_tensor(leaf)
                captured["entropy"] = float(entropy.data)
                return pg_loss - config.entropy_coef * entropy

            def value_loss_fn(leaf: Tensor) -> Tensor:
                v = mlp_tensor(leaf, value.arch, obs_mb).reshape((-1,))
                loss = (v - ret_mb).square().mean()
                captured["v_loss"] = float(loss.data)
                return loss

            try:
                g_pol = grad(policy, policy_loss_fn)
                g_val = config.value_coef * grad(value, value_loss_fn)
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"non-finite loss in ppo_update: {exc}; "
                    f"batch stats: adv mean {np.mean(adv_mb):.3g}, "
                    f"ret mean {np.mean(ret_mb):.3g}, "
                    f"obs max |x| {np.max(np.abs(obs_mb)):.3g}"
                ) from exc

            total_norm = math.sqrt(float(np.dot(g_pol, g_pol) + np.dot(g_val, g_val)))
            if total_norm > config.max_grad_norm:
                scale = config.max_grad_norm / total_norm
                g_pol = g_pol * scale
                g_val = g_val * scale

            new_pol_flat, policy_opt = adam_step(policy_opt, policy.flat, g_pol)
            new_val_flat, value_opt = adam_step(value_opt, value.flat, g_val)
            policy = GaussianPolicy(policy.arch, new_pol_flat)
            value = MlpParams(value.arch, new_val_flat)

            ratio = captured["ratio"]
            diag_sums += (
                captured["pg_loss"],
                captured["v_loss"],
                captured["entropy"],
                float(np.mean(np.abs(ratio - 1.0) > config.clip_eps)),
                float(np.mean(old_logp_mb - captured["logp_new"])),
            )
            n_minibatches += 1

    d = diag_sums / n_minibatches
    diagnostics = UpdateDiagnostics(
        policy_loss=d[0], value_loss=d[1], entropy=d[2],
        clip_fraction=d[3], approx_kl=d[4],
    )
    return policy, value, policy_opt, value_opt, diagnostics


# ---------------------------------------------------------------------------
# Evaluation and the training loop
# ---------------------------------------------------------------------------


@dataclass
class EvalSummary:
    """Mean-action evaluation metrics averaged over episodes."""

    mean_return_raw: float
    mean_return_shaped: float
    mean_jerk_std: float
    mean_switching: float
    reports: list[SmoothnessReport]
    trajectories: list[Trajectory]


def _eval_seed(seed: int, episode: int) -> int:
    # fixed derivation so every evaluation round sees the same initial states
    return (seed * 1_000_003 + 97 + episode) % 2**63


def evaluate_policy(env, policy: GaussianPolicy, seed: int, episodes: int,
                    env_id: str, penalty: PenaltyConfig) -> EvalSummary:
    """Run deterministic (mean-action) episodes and compute their metrics."""
    reports = []
    trajectories = []
    for ep in range(episodes):
        ep_seed = _eval_seed(seed, ep)
        obs = env.reset(ep_seed)
        transitions = []
        actions = []
        equipment = []
        done = False
        while not done:
            raw_state = env.raw_obs
            action = policy.mean(obs)
            obs, _shaped, done, info = env.step(action)
            emitted = info["action_emitted"]
            transitions.append(
                make_transition(raw_state, emitted, info["env_reward"], info["penalty"], done)
            )
            actions.append(emitted)
            if "equipment_state" in info:
                equipment.append(info["equipment_state"])
        traj = Trajectory(
            transitions=transitions, seed=ep_seed, env_id=env_id,
            penalty_order=penalty.order, lam=penalty.lam,
        )
        trajectories.append(traj)
        reports.append(
            compute_report(
                np.stack(actions),
                traj.env_rewards,
                traj.shaped_rewards,
                np.stack(equipment) if equipment else None,
            )
        )
    return EvalSummary(
        mean_return_raw=summarize([r.episode_return_raw for r in reports])[0],
        mean_return_shaped=summarize([r.episode_return_shaped for r in reports])[0],
        mean_jerk_std=summarize([r.jerk_std for r in reports])[0],
        mean_switching=summarize([r.switching_count for r in reports])[0],
        reports=reports,
        trajectories=trajectories,
    )


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value: MlpParams
    curve: list[tuple]
    final_eval: EvalSummary
    diagnostics: list[UpdateDiagnostics]
    seed: int


def train(env_id: str, penalty: PenaltyConfig, config: PpoConfig, seed: int, *,
          env_overrides: dict | None = None, out_dir: str | None = None,
          lr: float = 3e-4, eval_episodes: int = 5,
          eval_interval: int | None = None) -> TrainResult:
    """Train a Gaussian-MLP policy with PPO on the wrapped environment.

    Deterministic given (env_id, penalty, config, seed, overrides). When
    ``out_dir`` is given, writes ``curve.csv``, ``checkpoint.txt`` and the
    final evaluation trajectories there.
    """
    overrides = env_overrides or {}
    env = wrap_env(make_env(env_id, **overrides), penalty)
    eval_env = wrap_env(make_env(env_id, **overrides), penalty)

    rng = make_rng(seed)
    obs_dim = env.spec.state_dim
    act_dim = env.spec.action_dim
    policy = GaussianPolicy.init(rng, obs_dim, act_dim)
    value = init_mlp(rng, mlp_arch(obs_dim, 1))
    policy_opt = adam_init(policy.flat.shape[0], lr=lr)
    value_opt = adam_init(value.flat.shape[0], lr=lr)

    iterations = config.total_steps // config.rollout_len
    if eval_interval is None:
        eval_interval = max(1, iterations // 10)

    curve: list[tuple] = []
    diagnostics: list[UpdateDiagnostics] = []
    final_eval: EvalSummary | None = None
    obs = None

    for it in range(iterations):
        batch, obs = collect_rollout(env, policy, value, config.rollout_len, rng, obs)
        bootstrap = _value_of(value, obs)
        advantages, returns = compute_gae(
            batch.shaped_rewards, batch.values, batch.dones, bootstrap,
            config.gamma, config.gae_lambda,
        )
        batch.advantages = normalize_advantages(advantages)
        batch.returns = returns
        policy, value, policy_opt, value_opt, diag = ppo_update(
            policy, value, batch, config, rng, policy_opt, value_opt
        )
        diagnostics.append(diag)
        if not np.all(np.isfinite(policy.flat)) or not np.all(np.isfinite(value.flat)):
            raise TrainingDiverged(f"non-finite parameters after iteration {it}")

        last_iter = it == iterations - 1
        if (it + 1) % eval_interval == 0 or last_iter:
            final_eval = evaluate_policy(eval_env, policy, seed, eval_episodes, env_id, penalty)
            curve.append((
                (it + 1) * config.rollout_len,
                final_eval.mean_return_raw,
                final_eval.mean_return_shaped,
                final_eval.mean_jerk_std,
                final_eval.mean_switching,
            ))

    if final_eval is None:  # tiny budgets: evaluate the (possibly untrained) policy
        final_eval = evaluate_policy(eval_env, policy, seed, eval_episodes, env_id, penalty)
        curve.append((0, final_eval.mean_return_raw, final_eval.mean_return_shaped,
                      final_eval.mean_jerk_std, final_eval.mean_switching))

    result = TrainResult(
        policy=policy, value=value, curve=curve,
        final_eval=final_eval, diagnostics=diagnostics, seed=seed,
    )
    if out_dir is not None:
        _persist(result, out_dir)
    return result


def _persist(result: TrainResult, out_dir: str) -> None:
    from .nn import save_checkpoint

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "curve.csv"), "w", encoding="ascii") as fh:
        fh.write("# eval returns: raw = env reward (penalty excluded), shaped = raw - penalty\n")
        fh.write(CURVE_HEADER + "\n")
        for row in result.curve:
            fh.write(",".join([str(row[0])] + [fmt_float(v) for v in row[1:]]) + "\n")
    save_checkpoint(os.path.join(out_dir, "checkpoint.txt"), result.policy, result.value)
    for k, traj in enumerate(result.final_eval.trajectories):
        save_trajectory(traj, os.path.join(out_dir, f"eval_traj_{k}.txt"))
