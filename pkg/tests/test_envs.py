import numpy as np
import pytest

from smoothrl.core import make_rng
from smoothrl.envs import (
    DollHouse,
    DollHouseParams,
    DollHouseState,
    EnvSpec,
    PointTracker,
    make_env,
)


def test_env_spec_validation():
    with pytest.raises(ValueError, match="action_low"):
        EnvSpec("e", 1, 1, np.array([1.0]), np.array([0.0]), 10, 1.0)
    with pytest.raises(ValueError, match="max_episode_steps"):
        EnvSpec("e", 1, 1, np.array([0.0]), np.array([1.0]), 3, 1.0)


def test_make_env_unknown():
    with pytest.raises(ValueError, match="unknown env"):
        make_env("walker")
    with pytest.raises(ValueError, match="unknown dollhouse"):
        make_env("dollhouse", k_typo=1.0)


# ---------------------------------------------------------------------------
# point tracker
# ---------------------------------------------------------------------------


def test_point_tracker_reward_at_optimum():
    env = PointTracker()
    env.reset(0)
    env._pos = np.array([0.3, -0.4])
    env._vel = np.zeros(2)
    env._target = np.array([0.3, -0.4])
    _, reward, _, _ = env.step(np.zeros(2))
    assert reward == 0.0


def test_point_tracker_unit_distance_reward():
    env = PointTracker()
    env.reset(0)
    env._pos = np.array([1.0, 0.0])
    env._vel = np.zeros(2)
    env._target = np.zeros(2)
    _, reward, _, _ = env.step(np.zeros(2))
    assert reward == -1.0


def test_point_tracker_zero_policy_matches_closed_form():
    """With zero acceleration the point drifts at constant velocity."""
    env = PointTracker()
    env.reset(5)
    p0 = np.array([0.1, -0.2])
    v0 = np.array([0.15, 0.1])
    env._pos = p0.copy()
    env._vel = v0.copy()
    dt = env.spec.dt
    for t in range(1, 11):
        obs, _, _, _ = env.step(np.zeros(2))
        expected_pos = p0 + t * dt * v0  # analytic integration, no clipping hit
        assert np.allclose(obs[:2], expected_pos, atol=1e-12)
        assert np.array_equal(obs[2:4], v0)


def test_point_tracker_episode_length_and_bounds():
    env = PointTracker()
    env.reset(1)
    done = False
    steps = 0
    rng = make_rng(2)
    while not done:
        obs, _, done, _ = env.step(rng.uniform(-1, 1, 2))
        steps += 1
        assert np.all(np.abs(obs[:2]) <= PointTracker.POS_LIMIT)
        assert np.all(np.abs(obs[2:4]) <= PointTracker.VEL_LIMIT)
    assert steps == 200


def test_point_tracker_rejects_non_finite_action():
    env = PointTracker()
    env.reset(0)
    with pytest.raises(ValueError):
        env.step(np.array([np.nan, 0.0]))


# ---------------------------------------------------------------------------
# dollhouse
# ---------------------------------------------------------------------------


def test_dollhouse_reset_ranges():
    env = DollHouse()
    for seed in range(5):
        obs = env.reset(seed)
        assert 16.0 <= obs[0] <= 20.0
        assert 16.0 <= obs[1] <= 20.0
        assert obs[2] == env.params.outdoor_mean
        assert obs[3] == 0.0 and obs[4] == 0.0


def test_reset_determinism_both_envs():
    for env_id in ("point_tracker", "dollhouse"):
        a = make_env(env_id).reset(123)
        b = make_env(env_id).reset(123)
        assert np.array_equal(a, b)
        c = make_env(env_id).reset(124)
        assert not np.array_equal(a, c)


def test_dollhouse_single_step_hand_oracle():
    """One step from a fixed state, checked against hand-evaluated arithmetic.

    T1=17, T2=19, T_out=10, h1 on, h2 off, damper 0.5, setpoints inside the
    hysteresis band (latch):
        T1' = 17 + 0.05*(10-17) + 0.03*0.5*(19-17) + 0.4 = 17.08
        T2' = 19 + 0.05*(10-19) + 0.03*0.5*(17-19) + 0.0 = 18.52
    """
    env = DollHouse()
    env.reset(0)
    env.state = DollHouseState(T1=17.0, T2=19.0, T_out=10.0,
                               heater1=True, heater2=False, step_index=0)
    obs, reward, _, info = env.step(np.array([17.0, 19.0, 0.5]))
    assert obs[0] == pytest.approx(17.08, abs=1e-9)
    assert obs[1] == pytest.approx(18.52, abs=1e-9)
    assert np.array_equal(info["equipment_state"], [True, False])
    # reward: one heater on, both zones below comfort_low=20 after the update
    discomfort = (20.0 - 17.08) ** 2 + (20.0 - 18.52) ** 2
    assert reward == pytest.approx(-0.1 * 1 - 1.0 * discomfort, abs=1e-9)


def test_dollhouse_documented_default_state_step():
    # heaters latched on at equilibrium: envelope loss exactly cancels the gain
    env = DollHouse()
    env.reset(0)
    env.state = DollHouseState(T1=18.0, T2=18.0, T_out=10.0,
                               heater1=True, heater2=True, step_index=0)
    obs, _, _, _ = env.step(np.array([18.0, 18.0, 0.0]))
    # 18 + 0.05*(10-18) + 0 + 0.4 = 18 exactly
    assert obs[0] == pytest.approx(18.0, abs=1e-12)
    assert obs[1] == pytest.approx(18.0, abs=1e-12)


def test_dollhouse_thermostat_transitions():
    env = DollHouse()
    h = env.params.hysteresis
    assert env._thermostat(T=18.0, setpoint=20.0, h=h, prev_on=False) is True  # T < sp-h
    assert env._thermostat(T=22.0, setpoint=20.0, h=h, prev_on=True) is False  # T > sp+h
    assert env._thermostat(T=20.2, setpoint=20.0, h=h, prev_on=True) is True   # latched
    assert env._thermostat(T=20.2, setpoint=20.0, h=h, prev_on=False) is False


def test_dollhouse_comfortable_idle_reward_zero():
    env = DollHouse()
    env.reset(0)
    env.state = DollHouseState(T1=22.0, T2=22.0, T_out=10.0,
                               heater1=False, heater2=False, step_index=0)
    # setpoints far below T - h keep heaters off; temps stay inside [20, 24]
    _, reward, _, info = env.step(np.array([15.0, 15.0, 0.0]))
    assert reward == 0.0
    assert not info["equipment_state"].any()


def test_dollhouse_quadratic_comfort_excess():
    env = DollHouse()
    env.reset(0)
    env.state = DollHouseState(T1=25.6, T2=22.0, T_out=25.6,
                               heater1=False, heater2=False, step_index=0)
    # T1 stays at 25.6 (T_out equals T1, damper 0): one degree above comfort_high
    # after accounting for coupling is messy, so use damper 0 and equal T_out
    _, reward, _, _ = env.step(np.array([15.0, 15.0, 0.0]))
    t1_after = 25.6 + 0.05 * (25.6 - 25.6)
    t2_after = 22.0 + 0.05 * (25.6 - 22.0)
    expected = -1.0 * max(0.0, t1_after - 24.0) ** 2
    assert t2_after < 24.0
    assert reward == pytest.approx(expected, abs=1e-12)


def test_dollhouse_cooling_toward_outdoor_monotone():
    # T_out above the minimum-setpoint trip point so the heaters stay off
    env = DollHouse(params=DollHouseParams(outdoor_mean=15.5, outdoor_amplitude=0.0))
    env.reset(0)
    env.state = DollHouseState(T1=19.0, T2=17.0, T_out=15.5,
                               heater1=False, heater2=False, step_index=0)
    prev = (19.0, 17.0)
    for _ in range(200):
        obs, _, done, info = env.step(np.array([15.0, 15.0, 0.0]))
        assert not info["equipment_state"].any()
        assert obs[0] < prev[0] and obs[1] < prev[1]  # strictly decreasing
        assert obs[0] > 15.5 and obs[1] > 15.5        # never cross T_out
        prev = (obs[0], obs[1])
        if done:
            break


def test_dollhouse_hysteresis_latch_no_switching():
    # constant setpoint equal to the (constant) temperature: state never changes
    params = DollHouseParams(k_out=0.0, k_zone=0.0, k_heat=0.0)
    for initial in (False, True):
        env = DollHouse(params=params)
        env.reset(0)
        env.state = DollHouseState(T1=20.0, T2=20.0, T_out=10.0,
                                   heater1=initial, heater2=initial, step_index=0)
        for _ in range(50):
            _, _, _, info = env.step(np.array([20.0, 20.0, 0.0]))
            assert bool(info["equipment_state"][0]) is initial
            assert bool(info["equipment_state"][1]) is initial


def test_dollhouse_bounded_for_100k_random_steps():
    env = DollHouse()
    rng = make_rng(0)
    obs = env.reset(0)
    steps = 0
    while steps < 100_000:
        action = rng.uniform(env.spec.action_low, env.spec.action_high)
        obs, _, done, _ = env.step(action)  # raises FloatingPointError if diverged
        assert -50.0 <= obs[0] <= 100.0 and -50.0 <= obs[1] <= 100.0
        steps += 1
        if done:
            obs = env.reset(steps)


def test_dollhouse_step_determinism_bit_for_bit():
    def rollout():
        env = DollHouse()
        obs = env.reset(7)
        rng = make_rng(99)
        out = [obs]
        for _ in range(480):
            a = rng.uniform(env.spec.action_low, env.spec.action_high)
            obs, r, done, _ = env.step(a)
            out.append(np.concatenate([obs, [r]]))
        return np.vstack(out[1:])

    assert np.array_equal(rollout(), rollout())


def _count_switches(env, setpoints_fn, seed, steps=480):
    from smoothrl.metrics import switching_count

    env.reset(seed)
    states = []
    for t in range(steps):
        _, _, done, info = env.step(setpoints_fn(t))
        states.append(info["equipment_state"])
        if done:
            break
    return switching_count(np.stack(states))


def test_smooth_setpoint_beats_alternating_setpoint():
    """Constant setpoints never switch more than setpoints thrashing by 2h."""
    h = DollHouseParams().hysteresis
    for seed in range(5):
        env = DollHouse()
        const = _count_switches(env, lambda t: np.array([21.0, 21.0, 0.5]), seed)
        env2 = DollHouse()
        thrash = _count_switches(
            env2,
            lambda t: np.array([21.0 + (2 * h if t % 2 else -2 * h),
                                21.0 + (2 * h if t % 2 else -2 * h), 0.5]),
            seed,
        )
        assert const <= thrash
