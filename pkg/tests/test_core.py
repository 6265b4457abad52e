import numpy as np
import pytest

from smoothrl.core import (
    Trajectory,
    TrajectoryFormatError,
    Transition,
    load_trajectory,
    make_rng,
    make_transition,
    save_trajectory,
)


def test_rng_determinism_over_a_million_draws():
    a = make_rng(12345).random(10**6)
    b = make_rng(12345).random(10**6)
    assert np.array_equal(a, b)


def test_rng_different_seeds_differ():
    assert not np.array_equal(make_rng(1).random(100), make_rng(2).random(100))


@pytest.mark.parametrize("bad", [-1, 2**64, 1.5, "7"])
def test_rng_rejects_bad_seeds(bad):
    with pytest.raises((ValueError, TypeError)):
        make_rng(bad)


def test_make_transition_subtraction():
    t = make_transition([0.0], [0.0], env_reward=1.0, penalty=0.1, done=False)
    assert t.shaped_reward == 1.0 - 0.1


def test_transition_rejects_negative_penalty():
    with pytest.raises(ValueError, match="penalty"):
        Transition([0.0], [0.0], 1.0, 1.5, -0.5, False)


def test_transition_rejects_shaped_mismatch():
    with pytest.raises(ValueError, match="shaped_reward"):
        Transition([0.0], [0.0], 1.0, 0.95, 0.1, False)


def test_transition_rejects_non_finite():
    with pytest.raises(ValueError):
        make_transition([np.nan], [0.0], 1.0, 0.0, False)
    with pytest.raises(ValueError):
        make_transition([0.0], [np.inf], 1.0, 0.0, False)


def test_trajectory_rejects_empty():
    with pytest.raises(ValueError, match="at least one"):
        Trajectory(transitions=[], env_id="point_tracker")


def test_trajectory_rejects_done_mid_episode():
    t_done = make_transition([0.0], [0.0], 0.0, 0.0, True)
    t_live = make_transition([0.0], [0.0], 0.0, 0.0, False)
    with pytest.raises(ValueError, match="done"):
        Trajectory(transitions=[t_done, t_live], env_id="e")


def test_trajectory_rejects_mixed_dims():
    a = make_transition([0.0], [0.0], 0.0, 0.0, False)
    b = make_transition([0.0, 1.0], [0.0], 0.0, 0.0, False)
    with pytest.raises(ValueError, match="dimension"):
        Trajectory(transitions=[a, b], env_id="e")


def _random_trajectory(rng, n_steps=7, state_dim=3, action_dim=2):
    transitions = []
    for i in range(n_steps):
        transitions.append(
            make_transition(
                state=rng.standard_normal(state_dim),
                action=rng.standard_normal(action_dim),
                env_reward=float(rng.standard_normal()),
                penalty=float(rng.random()),
                done=i == n_steps - 1,
            )
        )
    return Trajectory(
        transitions=transitions, seed=42, env_id="point_tracker",
        penalty_order=3, lam=0.1,
    )


def test_save_single_transition_layout(tmp_path):
    traj = Trajectory(
        transitions=[make_transition([1.0, 2.0], [0.5], 1.0, 0.1, True)],
        seed=7, env_id="e", penalty_order=1, lam=0.1,
    )
    path = tmp_path / "t.txt"
    save_trajectory(traj, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2  # header + one data line
    assert lines[0].split(",")[0] == "e"
    assert lines[1].count("|") == 5


def test_round_trip_identity(tmp_path):
    rng = make_rng(0)
    for k in range(10):
        traj = _random_trajectory(rng, n_steps=1 + k)
        path = tmp_path / f"t{k}.txt"
        save_trajectory(traj, path)
        assert load_trajectory(path) == traj


def test_round_trip_awkward_floats(tmp_path):
    # values whose decimal expansions exercise the 17-digit format
    vals = [0.1, 1.0 / 3.0, 1e-300, 1e300, -0.0, 2.0**-52, np.nextafter(1.0, 2.0)]
    transitions = [make_transition([v], [v], v, abs(v), False) for v in vals]
    traj = Trajectory(transitions=transitions, seed=0, env_id="e", penalty_order=0, lam=0.0)
    path = tmp_path / "t.txt"
    save_trajectory(traj, path)
    loaded = load_trajectory(path)
    assert loaded == traj
    for got, t in zip(loaded.transitions, transitions):
        assert got.state[0] == t.state[0]  # exact, not approx


def test_stored_shaped_reward_is_difference(tmp_path):
    traj = Trajectory(
        transitions=[make_transition([0.0], [0.0], 1.0, 0.1, True)],
        seed=0, env_id="e", penalty_order=1, lam=0.1,
    )
    path = tmp_path / "t.txt"
    save_trajectory(traj, path)
    assert load_trajectory(path).transitions[0].shaped_reward == 0.9


def test_load_truncated_file_names_line(tmp_path):
    traj = _random_trajectory(make_rng(1), n_steps=3)
    path = tmp_path / "t.txt"
    save_trajectory(traj, path)
    text = path.read_text().splitlines()
    text[2] = text[2][: len(text[2]) // 2]  # chop a line in half
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(TrajectoryFormatError, match="line 3"):
        load_trajectory(path)


def test_load_done_mid_episode_is_invariant_error(tmp_path):
    early_done = make_transition([0.0], [0.0], 0.0, 0.0, True)
    live = make_transition([0.0], [0.0], 0.0, 0.0, False)
    traj = Trajectory(transitions=[live, early_done], seed=0, env_id="e",
                      penalty_order=0, lam=0.0)
    path = tmp_path / "t.txt"
    save_trajectory(traj, path)
    lines = path.read_text().splitlines()
    lines[1], lines[2] = lines[2], lines[1]  # move the done line to the middle
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TrajectoryFormatError, match="done"):
        load_trajectory(path)


def test_load_rejects_bad_done_flag(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("e,0,0,0\n1|1|0|0|0|maybe\n")
    with pytest.raises(TrajectoryFormatError, match="line 2"):
        load_trajectory(path)


def test_load_missing_file():
    with pytest.raises(OSError):
        load_trajectory("/nonexistent/path/t.txt")
