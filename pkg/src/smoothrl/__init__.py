"""smoothrl: action-smoothness regularization for reinforcement learning.

Derivative reward penalties (velocity, acceleration, jerk) with action-history
observation augmentation, a self-contained PPO trainer, smoothness/efficiency
metrics, two built-in control environments, and sparse system identification.
"""

__version__ = "0.1.0"

from .core import Trajectory, Transition, load_trajectory, make_rng, save_trajectory
from .envs import DollHouse, DollHouseParams, EnvSpec, PointTracker, make_env
from .metrics import (
    SmoothnessReport,
    compute_report,
    jerk_std,
    percent_reduction,
    summarize,
    switching_count,
    total_variation,
)
from .smoothing import (
    ActionHistory,
    PenaltyConfig,
    augment,
    compute_penalty,
    diff_coefficients,
    shape_reward,
    wrap_env,
)
from .trainer import PpoConfig, TrainingDiverged, compute_gae, train

__all__ = [
    "__version__",
    "Trajectory",
    "Transition",
    "load_trajectory",
    "save_trajectory",
    "make_rng",
    "EnvSpec",
    "PointTracker",
    "DollHouse",
    "DollHouseParams",
    "make_env",
    "SmoothnessReport",
    "compute_report",
    "jerk_std",
    "total_variation",
    "switching_count",
    "percent_reduction",
    "summarize",
    "ActionHistory",
    "PenaltyConfig",
    "augment",
    "compute_penalty",
    "diff_coefficients",
    "shape_reward",
    "wrap_env",
    "PpoConfig",
    "TrainingDiverged",
    "compute_gae",
    "train",
]
