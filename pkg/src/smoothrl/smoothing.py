"""Action-history buffer, derivative reward penalties, and the env wrapper.

The penalty of order k deducts ``lam * ||sum_j c_j a_{t-j}||^2`` from the
reward, where the coefficients c are the alternating-sign binomials of the
k-th finite difference:

    order 1 (velocity):      (1, -1)
    order 2 (acceleration):  (1, -2, 1)
    order 3 (jerk):          (1, -3, 3, -1)

Order 0 means no penalty (baseline). Differences are raw (not scaled by the
control period) and computed on the action actually emitted after clipping
to the environment's bounds. The observation handed to the policy is the raw
state concatenated with the last three emitted actions, so the penalty stays
a function of the (augmented) Markov state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import as_action, as_state

__all__ = [
    "PenaltyConfig",
    "ActionHistory",
    "diff_coefficients",
    "augment",
    "compute_penalty",
    "shape_reward",
    "SmoothingWrapper",
    "wrap_env",
]

HISTORY_LEN = 3
MAX_ORDER = 3


@dataclass(frozen=True)
class PenaltyConfig:
    """Derivative order (0 = baseline, no penalty) and weight lambda."""

    order: int
    lam: float = 0.1

    def __post_init__(self):
        if self.order not in (0, 1, 2, 3):
            raise ValueError(f"penalty order must be in {{0,1,2,3}}, got {self.order}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")


def diff_coefficients(order: int) -> np.ndarray:
    """Finite-difference coefficients (-1)^j * C(order, j) for j = 0..order."""
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"difference order must be in [1, {MAX_ORDER}], got {order}")
    return np.array([(-1.0) ** j * math.comb(order, j) for j in range(order + 1)])


@dataclass(frozen=True)
class ActionHistory:
    """The last three emitted actions, most recent first.

    At episode start all three slots are zero-filled: the penalty is then
    well-defined from t=0, at the cost of penalizing the first steps relative
    to a zero "virtual past".
    """

    a_prev1: np.ndarray
    a_prev2: np.ndarray
    a_prev3: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a_prev1", as_action(self.a_prev1))
        object.__setattr__(self, "a_prev2", as_action(self.a_prev2, dim=self.dim))
        object.__setattr__(self, "a_prev3", as_action(self.a_prev3, dim=self.dim))

    @classmethod
    def zeros(cls, dim: int) -> "ActionHistory":
        z = np.zeros(dim)
        return cls(z, z, z)

    @property
    def dim(self) -> int:
        return self.a_prev1.shape[0]

    def push(self, action) -> "ActionHistory":
        """Shift in a new most-recent action, discarding the oldest."""
        action = as_action(action, dim=self.dim)
        return ActionHistory(action, self.a_prev1, self.a_prev2)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.a_prev1, self.a_prev2, self.a_prev3])


def augment(state, history: ActionHistory) -> np.ndarray:
    """Concatenate [state, a_{t-1}, a_{t-2}, a_{t-3}] into one observation."""
    state = as_state(state)
    return np.concatenate([state, history.as_vector()])


def compute_penalty(config: PenaltyConfig, action, history: ActionHistory) -> float:
    """Penalty lam * ||k-th difference of (a_t, a_{t-1}, ...)||^2, >= 0."""
    if config.order == 0:
        return 0.0
    action = as_action(action, dim=history.dim)
    window = (action, history.a_prev1, history.a_prev2, history.a_prev3)
    # iterated pairwise differencing equals the signed-binomial expansion but
    # is exactly zero on constant inputs (and bit-reproducible: fixed op order)
    d = np.stack(window[config.order::-1])
    for _ in range(config.order):
        d = d[1:] - d[:-1]
    diff = d[0]
    return config.lam * float(np.dot(diff, diff))


def shape_reward(env_reward: float, penalty: float) -> float:
    """Shaped reward r' = r - penalty."""
    if penalty < 0:
        raise ValueError(f"penalty must be >= 0, got {penalty}")
    return env_reward - penalty


class SmoothingWrapper:
    """Wraps an environment with action-history observations and shaped rewards.

    The wrapped ``step`` clips the incoming action to the inner env's bounds,
    computes the derivative penalty against the current history, then steps the
    inner env with the clipped action. ``info`` carries the raw env reward, the
    penalty, and the emitted (clipped) action alongside the inner env's info.
    """

    def __init__(self, env, config: PenaltyConfig):
        self.env = env
        self.config = config
        d = env.spec.action_dim
        self.spec = replace(env.spec, state_dim=env.spec.state_dim + HISTORY_LEN * d)
        self.history = ActionHistory.zeros(d)
        self.raw_obs = None  # most recent unaugmented inner observation

    def reset(self, seed: int):
        obs = self.env.reset(seed)
        self.history = ActionHistory.zeros(self.env.spec.action_dim)
        self.raw_obs = obs
        return augment(obs, self.history)

    def step(self, action):
        action = as_action(action, dim=self.env.spec.action_dim)
        emitted = np.clip(action, self.env.spec.action_low, self.env.spec.action_high)
        penalty = compute_penalty(self.config, emitted, self.history)
        self.history = self.history.push(emitted)
        obs, env_reward, done, info = self.env.step(emitted)
        self.raw_obs = obs
        info = dict(info)
        info["env_reward"] = env_reward
        info["penalty"] = penalty
        info["action_emitted"] = emitted
        return augment(obs, self.history), shape_reward(env_reward, penalty), done, info


def wrap_env(env, config: PenaltyConfig) -> SmoothingWrapper:
    """Wrap ``env`` so observations are history-augmented and rewards shaped."""
    return SmoothingWrapper(env, config)
