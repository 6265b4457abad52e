"""Shared domain types, deterministic RNG, and trajectory persistence.

Conventions used across the package:

* Action vectors and environment states are 1-D float64 numpy arrays with
  finite entries. The helpers :func:`as_action` / :func:`as_state` validate
  and normalize inputs at module boundaries; internal code passes arrays
  through unchecked.
* All randomness flows through :func:`make_rng` (PCG64). Identical seeds
  produce identical draw streams on every platform.
* Trajectory files are line-delimited text, diff-able and stream-appendable,
  with every real stored as a 17-significant-digit decimal so 64-bit floats
  round-trip exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TrajectoryFormatError",
    "Transition",
    "Trajectory",
    "make_rng",
    "as_action",
    "as_state",
    "fmt_float",
    "make_transition",
    "save_trajectory",
    "load_trajectory",
]

#: numeric format that round-trips any finite float64 exactly
FLOAT_FMT = ".17g"

MAX_SEED = 2**64 - 1


class TrajectoryFormatError(ValueError):
    """Raised when a trajectory file is malformed or violates an invariant."""


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator seeded with ``seed``.

    PCG64 is numpy's default bit generator; given the same 64-bit seed it
    yields the same draw sequence on every platform, which is what makes
    multi-seed experiments replayable.
    """
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def _validated_vector(values, kind: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{kind} contains non-finite entries: {arr}")
    arr.setflags(write=False)
    return arr


def as_action(values, dim: int | None = None) -> np.ndarray:
    """Validate an action vector: 1-D, float64, finite, optionally of dim ``dim``."""
    arr = _validated_vector(values, "action")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"action dimension mismatch: expected {dim}, got {arr.shape[0]}")
    return arr


def as_state(values) -> np.ndarray:
    """Validate an environment state vector: 1-D, float64, finite."""
    return _validated_vector(values, "state")


def fmt_float(x: float) -> str:
    """Format a float with 17 significant digits (exact float64 round-trip)."""
    return format(float(x), FLOAT_FMT)


@dataclass(frozen=True, eq=False)
class Transition:
    """One (state, action, reward) step of an episode.

    ``shaped_reward`` must equal ``env_reward - penalty`` bit-for-bit; use
    :func:`make_transition` to build one with the canonical arithmetic order.
    """

    state: np.ndarray
    action: np.ndarray
    env_reward: float
    shaped_reward: float
    penalty: float
    done: bool

    def __post_init__(self):
        object.__setattr__(self, "state", as_state(self.state))
        object.__setattr__(self, "action", as_action(self.action))
        for name in ("env_reward", "shaped_reward", "penalty"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"transition invariant violated: {name} is not finite ({v})")
        if self.penalty < 0:
            raise ValueError(f"transition invariant violated: penalty >= 0 (got {self.penalty})")
        if self.shaped_reward != self.env_reward - self.penalty:
            raise ValueError(
                "transition invariant violated: shaped_reward == env_reward - penalty "
                f"({self.shaped_reward} != {self.env_reward} - {self.penalty})"
            )

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            np.array_equal(self.state, other.state)
            and np.array_equal(self.action, other.action)
            and self.env_reward == other.env_reward
            and self.shaped_reward == other.shaped_reward
            and self.penalty == other.penalty
            and self.done == other.done
        )


def make_transition(state, action, env_reward: float, penalty: float, done: bool) -> Transition:
    """Build a Transition, deriving shaped_reward = env_reward - penalty."""
    env_reward = float(env_reward)
    penalty = float(penalty)
    return Transition(
        state=state,
        action=action,
        env_reward=env_reward,
        shaped_reward=env_reward - penalty,
        penalty=penalty,
        done=done,
    )


@dataclass(eq=False)
class Trajectory:
    """An episode log plus the run metadata needed to interpret it."""

    transitions: list[Transition] = field(default_factory=list)
    seed: int = 0
    env_id: str = ""
    penalty_order: int = 0
    lam: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.transitions:
            raise ValueError("trajectory invariant violated: must contain at least one transition")
        done_idx = [i for i, t in enumerate(self.transitions) if t.done]
        if len(done_idx) > 1:
            raise ValueError("trajectory invariant violated: more than one done transition")
        if done_idx and done_idx[0] != len(self.transitions) - 1:
            raise ValueError(
                "trajectory invariant violated: done transition must be last "
                f"(found at index {done_idx[0]} of {len(self.transitions)})"
            )
        state_dims = {t.state.shape[0] for t in self.transitions}
        action_dims = {t.action.shape[0] for t in self.transitions}
        if len(state_dims) > 1 or len(action_dims) > 1:
            raise ValueError("trajectory invariant violated: inconsistent state/action dimensions")
        if self.penalty_order not in (0, 1, 2, 3):
            raise ValueError(f"penalty_order must be in {{0,1,2,3}}, got {self.penalty_order}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise ValueError(f"seed out of range: {self.seed}")
        for ch in ",|\n":
            if ch in self.env_id:
                raise ValueError(f"env_id may not contain {ch!r}: {self.env_id!r}")

    @property
    def states(self) -> np.ndarray:
        return np.stack([t.state for t in self.transitions])

    @property
    def actions(self) -> np.ndarray:
        return np.stack([t.action for t in self.transitions])

    @property
    def env_rewards(self) -> np.ndarray:
        return np.array([t.env_reward for t in self.transitions])

    @property
    def shaped_rewards(self) -> np.ndarray:
        return np.array([t.shaped_reward for t in self.transitions])

    def __len__(self) -> int:
        return len(self.transitions)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.env_id == other.env_id
            and self.penalty_order == other.penalty_order
            and self.lam == other.lam
            and self.transitions == other.transitions
        )


def _format_section(values: np.ndarray) -> str:
    return ",".join(fmt_float(v) for v in values)


def save_trajectory(traj: Trajectory, path: str | os.PathLike) -> None:
    """Write a trajectory as line-delimited text.

    Layout: a header ``env_id,penalty_order,lambda,seed`` followed by one
    line per transition, ``state|action|env_reward|shaped_reward|penalty|done``
    with comma-separated numbers inside each section and done as 0/1.
    """
    traj.validate()
    lines = [f"{traj.env_id},{traj.penalty_order},{fmt_float(traj.lam)},{traj.seed}"]
    for t in traj.transitions:
        lines.append(
            "|".join(
                (
                    _format_section(t.state),
                    _format_section(t.action),
                    fmt_float(t.env_reward),
                    fmt_float(t.shaped_reward),
                    fmt_float(t.penalty),
                    "1" if t.done else "0",
                )
            )
        )
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"failed to write trajectory to {path}: {exc}") from exc


def _parse_section(text: str, lineno: int, what: str) -> np.ndarray:
    if text == "":
        return np.empty(0, dtype=np.float64)
    try:
        return np.array([float(tok) for tok in text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise TrajectoryFormatError(f"line {lineno}: cannot parse {what}: {exc}") from exc


def load_trajectory(path: str | os.PathLike) -> Trajectory:
    """Parse a trajectory file written by :func:`save_trajectory`.

    Raises :class:`TrajectoryFormatError` naming the offending line for any
    malformed content, and for any violated trajectory invariant.
    """
    try:
        with open(path, "r", encoding="ascii") as fh:
            raw_lines = fh.read().splitlines()
    except OSError as exc:
        raise OSError(f"failed to read trajectory from {path}: {exc}") from exc

    if not raw_lines:
        raise TrajectoryFormatError("line 1: empty file, expected header")
    header = raw_lines[0].split(",")
    if len(header) != 4:
        raise TrajectoryFormatError(
            f"line 1: header must be env_id,penalty_order,lambda,seed (got {raw_lines[0]!r})"
        )
    env_id = header[0]
    try:
        penalty_order = int(header[1])
        lam = float(header[2])
        seed = int(header[3])
    except ValueError as exc:
        raise TrajectoryFormatError(f"line 1: cannot parse header: {exc}") from exc

    transitions = []
    for lineno, line in enumerate(raw_lines[1:], start=2):
        if line == "":
            raise TrajectoryFormatError(f"line {lineno}: blank line inside trajectory")
        sections = line.split("|")
        if len(sections) != 6:
            raise TrajectoryFormatError(
                f"line {lineno}: expected 6 |-separated sections, got {len(sections)}"
            )
        state = _parse_section(sections[0], lineno, "state")
        action = _parse_section(sections[1], lineno, "action")
        try:
            env_reward = float(sections[2])
            shaped_reward = float(sections[3])
            penalty = float(sections[4])
        except ValueError as exc:
            raise TrajectoryFormatError(f"line {lineno}: cannot parse reward fields: {exc}") from exc
        if sections[5] not in ("0", "1"):
            raise TrajectoryFormatError(f"line {lineno}: done flag must be 0 or 1, got {sections[5]!r}")
        try:
            transitions.append(
                Transition(
                    state=state,
                    action=action,
                    env_reward=env_reward,
                    shaped_reward=shaped_reward,
                    penalty=penalty,
                    done=sections[5] == "1",
                )
            )
        except ValueError as exc:
            raise TrajectoryFormatError(f"line {lineno}: {exc}") from exc

    try:
        return Trajectory(
            transitions=transitions,
            seed=seed,
            env_id=env_id,
            penalty_order=penalty_order,
            lam=lam,
        )
    except ValueError as exc:
        raise TrajectoryFormatError(str(exc)) from exc
