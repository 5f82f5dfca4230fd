#!/usr/bin/env python3
"""
Tests for autoencoder layer planning, forward/backward passes and optimizers
"""

import math

import numpy as np
import pytest

from dcmf_autoencoder import (
    AEWeights, AdamOptimizer, SGDOptimizer, backward, forward, forward_trace, init_weights,
    plan_architecture, pretrain, rms_loss, sgd_step,
)
from dcmf_errors import DomainError, ShapeError


def test_plan_halving_chain():
    plan = plan_architecture(1000, 0.5, 100)
    assert plan.encoder_sizes == (500, 250, 125, 100)
    assert plan.decoder_sizes == (125, 250, 500, 1000)
    assert plan.K == 100


def test_plan_degenerate_cases():
    assert plan_architecture(120, 0.5, 100).encoder_sizes == (100,)
    assert plan_architecture(2505, 0.01, 200).encoder_sizes == (200,)
    assert plan_architecture(10, 0.5, 40).encoder_sizes == (40,)


def test_plan_rounds_half_up():
    # 5 * 0.5 = 2.5 -> 3
    assert plan_architecture(5, 0.5, 1).encoder_sizes == (3, 2, 1)


def test_plan_rejects_bad_arguments():
    with pytest.raises(DomainError):
        plan_architecture(10, 1.0, 2)
    with pytest.raises(DomainError):
        plan_architecture(10, 0.0, 2)
    with pytest.raises(DomainError):
        plan_architecture(10, 0.5, 2, activation="softmax")


def test_init_weights_bounds_and_determinism():
    plan = plan_architecture(100, 0.5, 50)
    w1 = init_weights(plan, seed=3)
    w2 = init_weights(plan, seed=3)
    assert w1.weights[0].shape == (100, 50)
    assert np.all(np.abs(w1.weights[0]) <= 0.2)
    assert all(np.array_equal(a, b) for a, b in zip(w1.weights, w2.weights))
    assert all(not b.any() for b in w1.biases)
    assert w1.param_count == plan.param_count


def test_forward_identity_inverse_pair_reconstructs(rng):
    plan = plan_architecture(2, 0.5, 2, activation="identity")
    A = np.array([[2.0, 1.0], [1.0, 1.0]])
    w = AEWeights([A, np.linalg.inv(A)], [np.zeros(2), np.zeros(2)])
    x = rng.normal(size=(5, 2))
    encoding, recon = forward(w, plan, x)
    assert np.allclose(encoding, x @ A)
    assert np.allclose(recon, x)


def test_forward_tanh_ranges_and_zero_input(rng):
    plan = plan_architecture(8, 0.5, 2)
    w = init_weights(plan, seed=0)
    trace = forward_trace(w, plan, rng.normal(scale=10.0, size=(4, 8)))
    assert all(np.all(np.abs(a) < 1.0) for a in trace[1:])
    encoding, _ = forward(w, plan, np.zeros((3, 8)))
    assert not encoding.any()


def test_forward_shape_mismatch():
    plan = plan_architecture(8, 0.5, 2)
    with pytest.raises(ShapeError):
        forward(init_weights(plan, seed=0), plan, np.ones((3, 7)))


def _directional_loss(w, plan, x, out_dir, enc_dir):
    encoding, recon = forward(w, plan, x)
    return float(np.sum(out_dir * recon) + np.sum(enc_dir * encoding))


def _fd_check(plan, seed, n=5, h=1e-6):
    r = np.random.default_rng(seed)
    w = init_weights(plan, seed)
    w.biases = [r.normal(scale=0.1, size=b.shape) for b in w.biases]
    x = r.normal(size=(n, plan.input_dim))
    out_dir = r.normal(size=(n, plan.input_dim))
    enc_dir = r.normal(size=(n, plan.K))
    grads = backward(w, plan, x, out_dir, enc_dir)
    worst = 0.0
    for group, grad_group in ((w.weights, grads.weights), (w.biases, grads.biases)):
        for param, grad in zip(group, grad_group):
            numeric = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                saved = param[idx]
                param[idx] = saved + h
                up = _directional_loss(w, plan, x, out_dir, enc_dir)
                param[idx] = saved - h
                down = _directional_loss(w, plan, x, out_dir, enc_dir)
                param[idx] = saved
                numeric[idx] = (up - down) / (2 * h)
            scale = max(np.max(np.abs(grad)), np.max(np.abs(numeric)), 1e-8)
            worst = max(worst, float(np.max(np.abs(grad - numeric)) / scale))
    return worst


def test_backward_matches_finite_differences_on_6_3_2_net():
    plan = plan_architecture(6, 0.5, 2)
    assert plan.layer_dims == (6, 3, 2, 3, 6)
    assert _fd_check(plan, seed=11) < 1e-5


@pytest.mark.parametrize("activation", ["tanh", "sigmoid", "identity"])
def test_backward_matches_finite_differences_on_random_nets(activation):
    r = np.random.default_rng(5)
    for trial in range(20):
        input_dim = int(r.integers(3, 11))
        K = int(r.integers(1, input_dim))
        plan = plan_architecture(input_dim, float(r.uniform(0.4, 0.8)), K, activation)
        assert _fd_check(plan, seed=trial, n=4) < 1e-5


def test_backward_zero_and_encoding_only_paths(rng):
    plan = plan_architecture(6, 0.5, 2)
    w = init_weights(plan, seed=1)
    x = rng.normal(size=(4, 6))
    zero = backward(w, plan, x, np.zeros((4, 6)), np.zeros((4, 2)))
    assert all(not g.any() for g in zero.weights + zero.biases)

    enc_only = backward(w, plan, x, np.zeros((4, 6)), rng.normal(size=(4, 2)))
    decoder_layers = range(plan.n_encoder_layers, plan.n_layers)
    assert all(not enc_only.weights[i].any() for i in decoder_layers)
    assert enc_only.weights[0].any()


def test_sgd_step_contract():
    w = AEWeights([np.array([[2.0]])], [np.array([1.0])])
    zero = w.zeros_like()
    same = sgd_step(w, zero, 0.1, 0.0)
    assert np.array_equal(same.weights[0], w.weights[0])

    decayed = sgd_step(w, zero, 0.1, 0.5)
    assert decayed.weights[0][0, 0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))
    assert decayed.biases[0][0] == 1.0

    g = AEWeights([np.array([[3.0]])], [np.array([0.0])])
    assert sgd_step(w, g, 0.1, 0.0).weights[0][0, 0] == pytest.approx(2.0 - 0.3)
    with pytest.raises(DomainError):
        sgd_step(w, g, 0.0, 0.0)


def test_momentum_zero_matches_plain_sgd(rng):
    w = AEWeights([rng.normal(size=(3, 2))], [rng.normal(size=2)])
    g = AEWeights([rng.normal(size=(3, 2))], [rng.normal(size=2)])
    a = SGDOptimizer(0.0).step(w, g, 0.05, 0.01)
    b = sgd_step(w, g, 0.05, 0.01)
    assert np.array_equal(a.weights[0], b.weights[0])


def test_momentum_accumulates_velocity():
    w = AEWeights([np.array([[0.0]])], [np.array([0.0])])
    g = AEWeights([np.array([[1.0]])], [np.array([0.0])])
    opt = SGDOptimizer(0.5)
    w = opt.step(w, g, 1.0, 0.0)
    w = opt.step(w, g, 1.0, 0.0)
    assert w.weights[0][0, 0] == pytest.approx(-(1.0 + 1.5))


def test_adam_first_step_moves_by_learning_rate():
    w = AEWeights([np.array([[1.0, -1.0]])], [np.array([0.0, 0.0])])
    g = AEWeights([np.array([[0.3, -7.0]])], [np.array([0.0, 0.0])])
    out = AdamOptimizer().step(w, g, 0.01, 0.0)
    assert np.allclose(out.weights[0], [[0.99, -0.99]], atol=1e-6)


def test_rms_loss_and_gradient():
    target = np.zeros((2, 2))
    output = np.array([[1.0, -1.0], [1.0, -1.0]])
    loss, grad = rms_loss(target, output)
    assert loss == pytest.approx(1.0)
    assert np.allclose(grad, output / 4.0)
    loss, grad = rms_loss(target, target)
    assert loss == 0.0
    assert not grad.any()


def test_pretrain_disabled_returns_weights_unchanged():
    plan = plan_architecture(6, 0.5, 2)
    w = init_weights(plan, seed=0)
    assert pretrain(w, plan, np.ones((3, 6)), 0.1, 1e-4, 10, enabled=False) is w


def test_pretrain_infinite_threshold_runs_one_epoch(rng):
    plan = plan_architecture(6, 0.5, 2)
    w = init_weights(plan, seed=0)
    x = rng.normal(size=(5, 6))
    out = pretrain(w, plan, x, 0.1, math.inf, 50)
    _, recon = forward(w, plan, x)
    _, grad = rms_loss(x, recon)
    expected = sgd_step(w, backward(w, plan, x, grad, np.zeros((5, 2))), 0.1, 0.0)
    assert all(np.allclose(a, b) for a, b in zip(out.weights, expected.weights))


def test_pretrain_reconstructs_low_rank_data_linearly():
    r = np.random.default_rng(2)
    x = r.uniform(-1, 1, (20, 2)) @ r.uniform(-1, 1, (2, 6))
    plan = plan_architecture(6, 0.5, 2, activation="identity")
    w = pretrain(init_weights(plan, seed=0), plan, x, 0.01, -math.inf, 3000, optimizer="adam")
    _, recon = forward(w, plan, x)
    assert rms_loss(x, recon)[0] < 0.05


def test_pretrain_divergence_keeps_last_finite_weights(rng, caplog):
    plan = plan_architecture(6, 0.5, 2, activation="identity")
    w = init_weights(plan, seed=0)
    x = rng.uniform(-1, 1, (8, 6))
    out = pretrain(w, plan, x, 1e6, -math.inf, 500)
    assert "diverged" in caplog.text
    assert out.is_finite()
    _, recon = forward(out, plan, x)
    assert np.isfinite(rms_loss(x, recon)[0])
