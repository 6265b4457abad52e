import math

import numpy as np
import pytest

from smoothrl.core import make_rng
from smoothrl.nn import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    GaussianPolicy,
    MlpArch,
    MlpParams,
    Tensor,
    adam_init,
    adam_step,
    forward,
    grad,
    init_mlp,
    load_checkpoint,
    minimum,
    mlp_arch,
    mlp_tensor,
    save_checkpoint,
)


def naive_forward(params: MlpParams, x):
    """Independent re-implementation: explicit per-neuron loops."""
    h = list(x)
    layers = list(params.arch.segments())
    for li, (w_sl, b_sl, fi, fo) in enumerate(layers):
        W = params.flat[w_sl].reshape(fi, fo)
        b = params.flat[b_sl]
        out = []
        for j in range(fo):
            acc = b[j]
            for i in range(fi):
                acc += h[i] * W[i, j]
            out.append(acc)
        if li < len(layers) - 1:
            out = [math.tanh(v) for v in out]
        h = out
    return np.array(h)


def test_forward_zero_params_zero_output():
    arch = mlp_arch(3, 2)
    params = MlpParams(arch, np.zeros(arch.n_params))
    assert np.array_equal(forward(params, np.ones(3)), np.zeros(2))


def test_forward_identity_single_linear_layer():
    arch = MlpArch((3, 3))
    flat = np.concatenate([np.eye(3).reshape(-1), np.zeros(3)])
    params = MlpParams(arch, flat)
    x = np.array([0.5, -1.5, 2.0])
    assert np.array_equal(forward(params, x), x)


def test_forward_matches_naive_evaluator():
    rng = make_rng(0)
    for _ in range(5):
        arch = mlp_arch(4, 3, hidden=(8, 5))
        params = init_mlp(rng, arch)
        x = rng.standard_normal(4)
        assert np.allclose(forward(params, x), naive_forward(params, x), atol=1e-12)


def test_forward_batch_consistent_with_single():
    rng = make_rng(1)
    arch = mlp_arch(3, 2)
    params = init_mlp(rng, arch)
    xs = rng.standard_normal((6, 3))
    batch = forward(params, xs)
    for i in range(6):
        assert np.allclose(batch[i], forward(params, xs[i]), atol=1e-14)


def test_forward_errors():
    params = init_mlp(make_rng(0), mlp_arch(3, 2))
    with pytest.raises(ValueError, match="dim mismatch"):
        forward(params, np.ones(4))
    with pytest.raises(ValueError, match="non-finite"):
        forward(params, np.array([1.0, np.nan, 0.0]))


def test_grad_constant_loss_is_zero():
    params = init_mlp(make_rng(0), mlp_arch(2, 2))
    g = grad(params, lambda leaf: Tensor(5.0))
    assert np.array_equal(g, np.zeros(params.arch.n_params))


def test_grad_single_layer_quadratic_closed_form():
    # loss = ||W x + b - y||^2 has gradient 2(Wx+b-y) x^T wrt W and 2(Wx+b-y) wrt b
    arch = MlpArch((3, 2))
    rng = make_rng(2)
    params = init_mlp(rng, arch)
    x = rng.standard_normal(3)
    y = rng.standard_normal(2)

    def loss_fn(leaf):
        out = mlp_tensor(leaf, arch, x[None, :])
        return (out - y[None, :]).square().sum()

    g = grad(params, loss_fn)
    W = params.flat[:6].reshape(3, 2)
    b = params.flat[6:]
    resid = W.T @ x + b - y
    expected_W = 2.0 * np.outer(x, resid)
    expected_b = 2.0 * resid
    assert np.allclose(g[:6], expected_W.reshape(-1), atol=1e-12)
    assert np.allclose(g[6:], expected_b, atol=1e-12)


def central_difference(params: MlpParams, loss_value, i, h=1e-5):
    fp = params.flat.copy()
    fp[i] += h
    fm = params.flat.copy()
    fm[i] -= h
    return (loss_value(fp) - loss_value(fm)) / (2 * h)


def test_grad_matches_central_differences():
    rng = make_rng(3)
    for trial in range(3):
        arch = mlp_arch(5, 2, hidden=(16, 16))
        params = init_mlp(rng, arch)
        x = rng.standard_normal((8, 5))
        y = rng.standard_normal((8, 2))

        def loss_fn(leaf):
            return (mlp_tensor(leaf, arch, x) - y).square().mean()

        def loss_value(flat):
            out = forward(MlpParams(arch, flat), x)
            return float(np.mean((out - y) ** 2))

        g = grad(params, loss_fn)
        idx = rng.choice(arch.n_params, 50, replace=False)
        for i in idx:
            fd = central_difference(params, loss_value, i)
            denom = max(abs(fd), abs(g[i]), 1e-8)
            assert abs(fd - g[i]) / denom < 1e-4


def test_grad_rejects_non_finite_loss():
    params = init_mlp(make_rng(0), mlp_arch(2, 1))
    with pytest.raises(FloatingPointError):
        grad(params, lambda leaf: Tensor(np.inf))


def test_tape_minimum_routes_gradient():
    a = Tensor(np.array([1.0, 5.0]))
    b = Tensor(np.array([2.0, 3.0]))
    out = minimum(a, b).sum()
    out.backward()
    assert np.array_equal(a.grad, [1.0, 0.0])
    assert np.array_equal(b.grad, [0.0, 1.0])


def test_tape_clip_gradient_mask():
    x = Tensor(np.array([-2.0, 0.5, 3.0]))
    out = x.clip(-1.0, 1.0).sum()
    out.backward()
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


# ---------------------------------------------------------------------------
# Gaussian policy head
# ---------------------------------------------------------------------------


def test_log_prob_at_mode_d1():
    pol = GaussianPolicy.init(make_rng(0), 3, 1, init_log_std=0.0)
    obs = np.zeros(3)
    mode = pol.mean(obs)
    assert pol.log_prob(obs, mode) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_log_prob_one_sigma_away():
    pol = GaussianPolicy.init(make_rng(0), 3, 1, init_log_std=0.0)
    obs = np.zeros(3)
    a = pol.mean(obs) + 1.0  # sigma = exp(0) = 1
    assert pol.log_prob(obs, a) == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), abs=1e-12)


def test_log_prob_matches_independent_formula():
    rng = make_rng(4)
    pol = GaussianPolicy.init(rng, 4, 3, init_log_std=-0.3)
    obs = rng.standard_normal(4)
    action = rng.standard_normal(3)
    mu = pol.mean(obs)
    sigma = np.exp(pol.log_std)
    expected = sum(
        -0.5 * ((action[i] - mu[i]) / sigma[i]) ** 2
        - math.log(sigma[i]) - 0.5 * math.log(2 * math.pi)
        for i in range(3)
    )
    assert pol.log_prob(obs, action) == pytest.approx(expected, rel=1e-12)


def test_log_prob_tensor_matches_numpy():
    rng = make_rng(5)
    pol = GaussianPolicy.init(rng, 4, 2)
    obs = rng.standard_normal((9, 4))
    act = rng.standard_normal((9, 2))
    leaf = Tensor(pol.flat)
    assert np.allclose(pol.log_prob_tensor(leaf, obs, act).data,
                       pol.log_prob(obs, act), atol=1e-13)


def test_density_integrates_to_one_monte_carlo():
    pol = GaussianPolicy.init(make_rng(6), 2, 1, init_log_std=0.2)
    obs = np.array([0.3, -0.7])
    mu = pol.mean(obs)[0]
    sigma = float(np.exp(pol.log_std)[0])
    rng = make_rng(7)
    lo, hi = mu - 8 * sigma, mu + 8 * sigma
    xs = rng.uniform(lo, hi, 10**6)
    z = (xs - mu) / sigma
    logp = -0.5 * z * z - math.log(sigma) - 0.5 * math.log(2 * math.pi)
    estimate = float(np.mean(np.exp(logp)) * (hi - lo))
    assert abs(estimate - 1.0) < 0.01


def test_log_std_clamped_on_construction():
    arch = mlp_arch(2, 1)
    flat = np.concatenate([np.zeros(arch.n_params), [10.0]])
    pol = GaussianPolicy(arch, flat)
    assert pol.log_std[0] == LOG_STD_MAX
    flat2 = np.concatenate([np.zeros(arch.n_params), [-99.0]])
    assert GaussianPolicy(arch, flat2).log_std[0] == LOG_STD_MIN


def test_sample_determinism():
    pol = GaussianPolicy.init(make_rng(8), 3, 2)
    obs = np.ones(3)
    a = pol.sample(obs, make_rng(1))
    b = pol.sample(obs, make_rng(1))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_grad_keeps_params():
    state = adam_init(3, lr=0.1)
    params = np.array([1.0, -2.0, 0.5])
    new_params, new_state = adam_step(state, params, np.zeros(3))
    assert np.array_equal(new_params, params)
    assert new_state.step == 1


def test_adam_first_step_hand_computed():
    state = adam_init(2, lr=0.05)
    params = np.zeros(2)
    g = np.array([3.0, -0.2])
    new_params, _ = adam_step(state, params, g)
    m_hat = (0.1 * g) / (1 - 0.9)
    v_hat = (0.001 * g * g) / (1 - 0.999)
    expected = params - 0.05 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.allclose(new_params, expected, atol=1e-15)
    # bias-corrected first step is ~ lr * sign(g)
    assert np.allclose(np.abs(new_params), 0.05, atol=1e-6)


def test_adam_bit_for_bit_reproducible():
    g = make_rng(0).standard_normal(10)
    p = make_rng(1).standard_normal(10)

    def run():
        state = adam_init(10)
        params = p.copy()
        for _ in range(2):
            params, state = adam_step(state, params, g)
        return params

    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite_grad():
    state = adam_init(2)
    with pytest.raises(FloatingPointError):
        adam_step(state, np.zeros(2), np.array([1.0, np.nan]))


def test_adam_moments_decay_on_zero_grad():
    state = adam_init(1, lr=0.1)
    params = np.zeros(1)
    params, state = adam_step(state, params, np.array([1.0]))
    m_before = state.m.copy()
    _, state2 = adam_step(state, params, np.zeros(1))
    assert abs(state2.m[0]) < abs(m_before[0])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = make_rng(9)
    pol = GaussianPolicy.init(rng, 5, 2, init_log_std=-0.25)
    val = init_mlp(rng, mlp_arch(5, 1))
    path = tmp_path / "ckpt.txt"
    save_checkpoint(path, pol, val)
    pol2, val2 = load_checkpoint(path)
    assert pol2.arch == pol.arch
    assert np.array_equal(pol2.flat, pol.flat)
    assert np.array_equal(val2.flat, val.flat)


def test_checkpoint_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("policy_dims=3,2\n")
    with pytest.raises(ValueError, match="malformed"):
        load_checkpoint(path)
