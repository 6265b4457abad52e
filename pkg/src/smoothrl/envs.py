"""Built-in environments: a 2-D point tracker and a two-zone HVAC simulator.

Both are dependency-free, discrete-time, and bit-for-bit deterministic given a
reset seed and an action sequence. They follow a small gym-like protocol:

    env.spec                      -> EnvSpec
    env.reset(seed) -> obs        (1-D float64 array)
    env.step(action) -> (obs, reward, done, info)

``point_tracker`` is a double-integrator reach task (state: position,
velocity, target; action: acceleration). ``dollhouse`` is a two-zone thermal
model whose continuous actions are heating setpoints plus an inter-zone
damper; bang-bang thermostats with hysteresis turn the zone heaters on and
off, which makes equipment switching a real, countable phenomenon driven by
how jerky the setpoint trajectory is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import as_action, make_rng

__all__ = [
    "EnvSpec",
    "PointTracker",
    "DollHouseParams",
    "DollHouseState",
    "DollHouse",
    "ENV_IDS",
    "make_env",
]

# temperatures outside this band mean the dynamics diverged
SANITY_BOUNDS_C = (-50.0, 100.0)


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment's interface."""

    id: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int
    dt: float

    def __post_init__(self):
        low = np.array(self.action_low, dtype=np.float64).reshape(-1)
        high = np.array(self.action_high, dtype=np.float64).reshape(-1)
        if low.shape != (self.action_dim,) or high.shape != (self.action_dim,):
            raise ValueError("action bounds must match action_dim")
        if not np.all(low < high):
            raise ValueError("action_low must be < action_high element-wise")
        if self.max_episode_steps < 4:
            raise ValueError("max_episode_steps must be >= 4 (metrics need 4 actions)")
        low.setflags(write=False)
        high.setflags(write=False)
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)


class PointTracker:
    """Double-integrator point mass chasing a fixed per-episode target.

    State [px, py, vx, vy, tx, ty]; action is acceleration in [-1, 1]^2.
    Update order: pos += vel*dt, then vel += action*dt, after which position
    and velocity are clamped to the arena walls / speed limit (+-2). Reward is
    -||pos - target||^2 - 0.01 ||action||^2 on the post-update position.
    """

    ACTION_COST = 0.01
    POS_LIMIT = 2.0
    VEL_LIMIT = 2.0

    def __init__(self, max_episode_steps: int = 200, dt: float = 0.05):
        self.spec = EnvSpec(
            id="point_tracker",
            state_dim=6,
            action_dim=2,
            action_low=np.array([-1.0, -1.0]),
            action_high=np.array([1.0, 1.0]),
            max_episode_steps=max_episode_steps,
            dt=dt,
        )
        self._pos = np.zeros(2)
        self._vel = np.zeros(2)
        self._target = np.zeros(2)
        self._step_index = 0

    def _obs(self) -> np.ndarray:
        return np.concatenate([self._pos, self._vel, self._target])

    def reset(self, seed: int) -> np.ndarray:
        rng = make_rng(seed)
        self._pos = rng.uniform(-1.0, 1.0, 2)
        self._vel = np.zeros(2)
        self._target = rng.uniform(-1.0, 1.0, 2)
        self._step_index = 0
        return self._obs()

    def step(self, action):
        action = as_action(action, dim=2)
        a = np.clip(action, self.spec.action_low, self.spec.action_high)
        dt = self.spec.dt
        self._pos = np.clip(self._pos + self._vel * dt, -self.POS_LIMIT, self.POS_LIMIT)
        self._vel = np.clip(self._vel + a * dt, -self.VEL_LIMIT, self.VEL_LIMIT)
        err = self._pos - self._target
        reward = -float(np.dot(err, err)) - self.ACTION_COST * float(np.dot(a, a))
        self._step_index += 1
        done = self._step_index >= self.spec.max_episode_steps
        return self._obs(), reward, done, {}


@dataclass(frozen=True)
class DollHouseParams:
    """Two-zone thermal constants, per-step discrete-time form.

    These are desk-scale defaults chosen so an unregularized policy exhibits
    frequent heater switching; every value is config-overridable.
    """

    k_out: float = 0.05        # envelope loss toward outdoor, 1/step
    k_zone: float = 0.03       # inter-zone coupling at damper=1, 1/step
    k_heat: float = 0.4        # heater gain, degC/step
    hysteresis: float = 0.5    # thermostat half-band, degC
    comfort_low: float = 20.0
    comfort_high: float = 24.0
    energy_weight: float = 0.1
    comfort_weight: float = 1.0
    outdoor_mean: float = 10.0
    outdoor_amplitude: float = 5.0
    outdoor_period: int = 480  # steps per outdoor-temperature cycle

    def __post_init__(self):
        for name in ("k_out", "k_zone", "k_heat", "energy_weight", "comfort_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.comfort_low < self.comfort_high:
            raise ValueError("comfort_low must be < comfort_high")
        if not self.hysteresis > 0:
            raise ValueError("hysteresis must be > 0")
        if self.outdoor_period <= 0:
            raise ValueError("outdoor_period must be positive")


@dataclass
class DollHouseState:
    """Physical state of the two-zone house."""

    T1: float
    T2: float
    T_out: float
    heater1: bool
    heater2: bool
    step_index: int


class DollHouse:
    """Two-zone HVAC simulator with hysteretic thermostats.

    Observation [T1, T2, T_out, heater1, heater2] (heaters as 0/1); action
    [setpoint1, setpoint2, damper] with setpoints clipped to [15, 30] degC and
    damper to [0, 1]. Each step:

      1. thermostats latch: heater_i turns on below setpoint_i - h, off above
         setpoint_i + h, otherwise keeps its previous state;
      2. zone temperatures update by envelope loss, damper-scaled inter-zone
         coupling, and heater gain (explicit per-step coefficients);
      3. outdoor temperature follows its sinusoid of the step index;
      4. reward = -energy_weight * (heaters on) - comfort_weight * squared
         excursion of each zone outside the comfort band.

    ``info["equipment_state"]`` exposes the heater on/off pair for switching
    counts. An episode is 480 steps of 180 s (24 h) by default.
    """

    def __init__(self, params: DollHouseParams | None = None,
                 max_episode_steps: int = 480, dt: float = 180.0):
        self.params = params if params is not None else DollHouseParams()
        self.spec = EnvSpec(
            id="dollhouse",
            state_dim=5,
            action_dim=3,
            action_low=np.array([15.0, 15.0, 0.0]),
            action_high=np.array([30.0, 30.0, 1.0]),
            max_episode_steps=max_episode_steps,
            dt=dt,
        )
        self.state = DollHouseState(18.0, 18.0, self.params.outdoor_mean, False, False, 0)

    def _outdoor(self, step_index: int) -> float:
        p = self.params
        return p.outdoor_mean + p.outdoor_amplitude * math.sin(
            2.0 * math.pi * step_index / p.outdoor_period
        )

    def _obs(self) -> np.ndarray:
        s = self.state
        return np.array([s.T1, s.T2, s.T_out, float(s.heater1), float(s.heater2)])

    def reset(self, seed: int) -> np.ndarray:
        rng = make_rng(seed)
        temps = rng.uniform(16.0, 20.0, 2)
        self.state = DollHouseState(
            T1=float(temps[0]),
            T2=float(temps[1]),
            T_out=self._outdoor(0),
            heater1=False,
            heater2=False,
            step_index=0,
        )
        return self._obs()

    @staticmethod
    def _thermostat(T: float, setpoint: float, h: float, prev_on: bool) -> bool:
        if T < setpoint - h:
            return True
        if T > setpoint + h:
            return False
        return prev_on

    def step(self, action):
        action = as_action(action, dim=3)
        a = np.clip(action, self.spec.action_low, self.spec.action_high)
        sp1, sp2, damper = float(a[0]), float(a[1]), float(a[2])
        p = self.params
        s = self.state

        h1 = self._thermostat(s.T1, sp1, p.hysteresis, s.heater1)
        h2 = self._thermostat(s.T2, sp2, p.hysteresis, s.heater2)

        T1 = s.T1 + p.k_out * (s.T_out - s.T1) + p.k_zone * damper * (s.T2 - s.T1) + p.k_heat * h1
        T2 = s.T2 + p.k_out * (s.T_out - s.T2) + p.k_zone * damper * (s.T1 - s.T2) + p.k_heat * h2

        lo, hi = SANITY_BOUNDS_C
        if not (lo <= T1 <= hi and lo <= T2 <= hi):
            raise FloatingPointError(
                f"dollhouse dynamics diverged: temperatures ({T1}, {T2}) outside {SANITY_BOUNDS_C}"
            )

        step_index = s.step_index + 1
        self.state = DollHouseState(
            T1=T1, T2=T2, T_out=self._outdoor(step_index),
            heater1=h1, heater2=h2, step_index=step_index,
        )

        energy = p.energy_weight * (float(h1) + float(h2))
        discomfort = 0.0
        for T in (T1, T2):
            excess = max(0.0, p.comfort_low - T, T - p.comfort_high)
            discomfort += excess * excess
        reward = -energy - p.comfort_weight * discomfort

        done = step_index >= self.spec.max_episode_steps
        info = {"equipment_state": np.array([h1, h2], dtype=bool)}
        return self._obs(), reward, done, info

    # observation columns holding the 0/1 equipment states
    equipment_state_slice = (3, 5)


ENV_IDS = ("point_tracker", "dollhouse")


def make_env(env_id: str, **overrides):
    """Instantiate a built-in environment by id.

    Keyword overrides are forwarded to the constructor; for ``dollhouse``,
    any :class:`DollHouseParams` field may also be given directly.
    """
    if env_id == "point_tracker":
        return PointTracker(**overrides)
    if env_id == "dollhouse":
        param_fields = set(DollHouseParams.__dataclass_fields__)
        params_kw = {k: v for k, v in overrides.items() if k in param_fields}
        env_kw = {k: v for k, v in overrides.items() if k not in param_fields}
        unknown = set(env_kw) - {"max_episode_steps", "dt"}
        if unknown:
            raise ValueError(f"unknown dollhouse parameters: {sorted(unknown)}")
        return DollHouse(params=DollHouseParams(**params_kw), **env_kw)
    raise ValueError(f"unknown env id {env_id!r}; available: {ENV_IDS}")
