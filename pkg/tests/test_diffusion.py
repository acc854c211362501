import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgeflow.autodiff import Tensor, grad_check
from edgeflow.diffusion import (
    DenoiserNet,
    MixtureReward,
    NoiseSchedule,
    add_noise,
    analytic_log_reward,
    ldm_loss,
    log_reward,
    make_schedule,
    make_toy_task,
    predict_noise,
    pretrain_denoiser,
    sample_reverse,
)
from edgeflow.errors import ConfigError, ContractError, EdgeIndexError, ShapeError


def test_no_noise_schedule():
    s = make_schedule(1, 1.0, 1.0)
    assert s.alpha_bar(1) == 1.0 and s.alpha_bar(0) == 1.0


def test_constant_schedule_product():
    s = make_schedule(100, 0.99, 0.99)
    assert s.alpha_bar(100) == pytest.approx(0.99**100, rel=1e-13)


@given(st.floats(0.5, 1.0), st.floats(0.01, 1.0), st.integers(1, 200))
def test_alpha_bar_nonincreasing(first, frac, steps):
    s = make_schedule(steps, first, first * frac)
    assert np.all(np.diff(s.cumulative) <= 0)
    assert s.cumulative[-1] == pytest.approx(s.alpha_bar(steps))


def test_schedule_validation():
    with pytest.raises(ConfigError):
        make_schedule(0, 0.9, 0.8)
    with pytest.raises(ConfigError):
        make_schedule(10, 0.8, 0.9)
    with pytest.raises(EdgeIndexError):
        make_schedule(10, 0.9, 0.8).alpha_bar(11)


def test_add_noise_limits():
    z0 = np.array([0.3, -1.2])
    z, _ = add_noise(z0, 1, make_schedule(1, 1.0, 1.0), np.random.default_rng(0))
    np.testing.assert_array_equal(z, z0)
    z, eps = add_noise(z0, 1, NoiseSchedule(np.array([0.0])), np.random.default_rng(0))
    np.testing.assert_array_equal(z, eps)
    with pytest.raises(EdgeIndexError):
        add_noise(z0, 0, make_schedule(3, 0.9, 0.8), np.random.default_rng(0))


def test_add_noise_variance():
    rng = np.random.default_rng(1)
    sched = make_schedule(20, 0.99, 0.8)
    t = 12
    z0 = rng.normal(scale=1.7, size=(10_000, 3))
    zt, _ = add_noise(z0, t, sched, rng)
    abar = sched.alpha_bar(t)
    expected = abar * z0.var(axis=0) + (1 - abar)
    assert np.all(np.abs(zt.var(axis=0) / expected - 1) < 0.05)


def test_zero_network_predicts_zero():
    net = DenoiserNet(2, 3, 10, np.random.default_rng(0), hidden=5)
    for p in net.parameters():
        p.data[:] = 0.0
    out = predict_noise(np.ones(2), 3, np.ones((4, 3)), net)
    np.testing.assert_array_equal(out.data, np.zeros((4, 2)))


def test_predict_noise_shapes():
    net = DenoiserNet(2, 3, 10, np.random.default_rng(0), hidden=5)
    assert predict_noise(np.ones((4, 2)), np.arange(1, 5), np.ones((4, 3)), net).shape == (4, 2)
    assert predict_noise(np.ones(2), 1, np.ones(3), net).shape == (1, 2)
    with pytest.raises(ShapeError):
        predict_noise(np.ones((3, 2)), 1, np.ones((4, 3)), net)
    with pytest.raises(ShapeError):
        predict_noise(np.ones(2), 1, np.ones((4, 2)), net)


def test_denoiser_condition_grad_check():
    rng = np.random.default_rng(2)
    net = DenoiserNet(2, 3, 10, rng, hidden=6)
    c = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    eps = rng.normal(size=2)
    z_t = np.array([0.4, -0.1])
    loss = lambda: ldm_loss(eps, predict_noise(z_t, 4, c, net))[1]
    assert grad_check(loss, [c] + net.parameters()) < 1e-4


def test_ldm_loss_examples():
    eps = np.random.default_rng(3).normal(size=(2, 4))
    per_row, mean = ldm_loss(eps, Tensor(eps))
    assert mean.item() == 0.0
    per_row, mean = ldm_loss(eps, Tensor(eps + 1.0))
    np.testing.assert_allclose(per_row.data, [1.0, 1.0], rtol=1e-15)
    with pytest.raises(ShapeError):
        ldm_loss(np.ones((2, 3)), Tensor(np.ones((2, 4))))


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_ldm_loss_vs_oracle(m, d, seed):
    rng = np.random.default_rng(seed)
    eps, eps_hat = rng.normal(size=(m, d)), rng.normal(size=(m, d))
    per_row, mean = ldm_loss(eps, Tensor(eps_hat))
    oracle = [sum((a - b) ** 2 for a, b in zip(r1, r2)) / d for r1, r2 in zip(eps, eps_hat)]
    assert np.max(np.abs(per_row.data - oracle)) < 1e-12
    assert abs(mean.item() - sum(oracle) / m) < 1e-12


def test_log_reward():
    assert log_reward(0.0) == 0.0 and np.exp(log_reward(0.0)) == 1.0
    assert np.exp(log_reward(np.log(2.0))) == pytest.approx(0.5, rel=1e-15)
    np.testing.assert_array_equal(log_reward([0.5, 1.5, 0.0]), [-0.5, -1.5, 0.0])
    with pytest.raises(ContractError):
        log_reward([-0.1])


def test_mixture_examples():
    one = MixtureReward(np.array([[1.0, 2.0]]), [1.0], [1.0])
    assert one(np.array([[1.0, 2.0]]))[0] == 0.0
    two = MixtureReward(np.array([[1.0, 0.0], [-1.0, 0.0]]), [0.5], [1.0])
    a, b = two(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert a == b
    with pytest.raises(ConfigError):
        MixtureReward(np.zeros((1, 2)), [0.0], [1.0])


@given(st.integers(0, 2**32 - 1))
def test_mixture_vs_direct_sum(seed):
    rng = np.random.default_rng(seed)
    k, d = int(rng.integers(1, 5)), int(rng.integers(1, 6))
    centers = rng.normal(size=(k, d))
    widths = rng.uniform(0.5, 2.0, size=k)
    weights = rng.uniform(0.1, 1.0, size=k)
    x = rng.normal(size=(3, d))
    got = analytic_log_reward(x, MixtureReward(centers, widths, weights))
    for row, val in zip(x, got):
        direct = sum(w * np.exp(-np.sum((row - c) ** 2) / (2 * s * s)) for c, s, w in zip(centers, widths, weights))
        assert abs(val - np.log(direct)) < 1e-12


def test_reverse_identity_step():
    net = DenoiserNet(2, 3, 1, np.random.default_rng(0), hidden=4)
    for p in net.parameters():
        p.data[:] = 0.0
    z_T = np.array([[0.7, -0.3], [1.0, 2.0]])
    out = sample_reverse(z_T, np.ones((2, 3)), net, make_schedule(1, 1.0, 1.0), np.random.default_rng(0))
    np.testing.assert_array_equal(out, z_T)


def test_reverse_shapes_and_shared_noise():
    rng = np.random.default_rng(5)
    net = DenoiserNet(2, 3, 5, rng, hidden=4)
    sched = make_schedule(5, 0.99, 0.9)
    assert sample_reverse(rng.normal(size=(4, 2)), rng.normal(size=(4, 3)), net, sched, rng).shape == (4, 2)
    same = sample_reverse(np.zeros((1, 2)), np.ones((3, 3)), net, sched, rng, shared_noise=True)
    assert np.all(same == same[0])
    with pytest.raises(ConfigError):
        sample_reverse(np.zeros((1, 2)), np.ones((1, 3)), net, NoiseSchedule(np.array([0.5, 0.0])), rng)


def test_trained_sampler_matches_data_mean():
    rng = np.random.default_rng(0)
    sched = make_schedule(50, 0.999, 0.8)
    conds = rng.normal(size=(4, 4))
    task = make_toy_task(4, conds)
    net = DenoiserNet(2, 4, 50, rng, hidden=32)
    losses = pretrain_denoiser(net, task, sched, rng, steps=1500)
    assert np.mean(losses[-100:]) < np.mean(losses[:100])
    n = 2000
    labels, data = task.sample(n, rng)
    out = sample_reverse(rng.standard_normal((n, 2)), conds[labels], net, sched, rng)
    se = np.sqrt(data.var(axis=0) / n + out.var(axis=0) / n)
    assert np.all(np.abs(out.mean(axis=0) - data.mean(axis=0)) < 3 * se)


def test_toy_task_layout():
    task = make_toy_task(4, np.eye(4), radius=2.0)
    np.testing.assert_allclose(np.linalg.norm(task.centers, axis=1), 2.0)
    np.testing.assert_allclose(task.ambiguous_condition, np.full(4, 0.25))
    with pytest.raises(ConfigError):
        make_toy_task(3, np.eye(4))
