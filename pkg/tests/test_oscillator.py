import numpy as np
import pytest

from neural_oscillator.encoder import SineEncoderSpec, build_sine_encoder
from neural_oscillator.nets import InitSpec, Layer, MlpParams, init_mlp
from neural_oscillator.oscillator import (IntegrationError, OscillatorModel, lr_loss, oscillator_forward,
                                          oscillator_loss_and_grad, oscillator_predict, simulate_states)
from neural_oscillator.signals import Signal
from neural_oscillator.verification import gradcheck_suite


def time_readout(r, p=1):
    """Pi that returns its time argument."""
    w = np.zeros((1, r + p + 1))
    w[0, -1] = 1.0
    return MlpParams([Layer(w, np.zeros(1), "linear")])


def unit_oscillator():
    """Gamma whose first mode realizes x'' = -x + u through a ReLU pair."""
    return build_sine_encoder(SineEncoderSpec(np.array([1.0, 2.0]), 1))


def test_zero_dynamics_output_time():
    r = 2
    gamma = init_mlp([2 * r + 1, 3, r], "relu", InitSpec("zeros"))
    model = OscillatorModel(gamma, time_readout(r), r)
    u = Signal(0.1, np.random.default_rng(0).normal(size=20))
    y, cache = oscillator_forward(model, u)
    assert np.array_equal(y.values[:, 0], np.arange(20) * 0.1)
    assert np.array_equal(cache.z, np.zeros((1, 20, 2 * r)))


def test_zero_input_keeps_encoder_at_rest():
    gamma = build_sine_encoder(SineEncoderSpec(np.array([0.5, 2.0, 7.0]), 1))
    X = simulate_states(gamma, 3, np.zeros((2, 50)), 0.01)
    assert np.array_equal(X, np.zeros((2, 50, 3)))


def test_forced_unit_oscillator_closed_form():
    dt = 1e-3
    n = int(round(np.pi / dt))
    t = np.arange(n + 1) * dt
    X = simulate_states(unit_oscillator(), 2, np.sin(t)[None], dt)
    exact = 0.5 * (np.sin(t[-1]) - t[-1] * np.cos(t[-1]))
    assert abs(X[0, -1, 0] - exact) < 1e-5
    assert abs(exact - np.pi / 2) < 1e-5


def test_rk2_convergence_order():
    T = 2.0
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        n = int(round(T / dt))
        t = np.arange(n + 1) * dt
        X = simulate_states(unit_oscillator(), 2, np.sin(t)[None], dt)[0, :, 0]
        exact = 0.5 * (np.sin(t) - t * np.cos(t))
        errs.append(np.max(np.abs(X - exact)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5)), ratios


def test_lr_loss_direct_substitution():
    y = np.array([1.0, 2.0]).reshape(1, 2, 1)
    assert float(lr_loss(y, np.zeros_like(y), 2)) == 5.0


def test_loss_zero_at_target():
    r = 2
    gamma = init_mlp([2 * r + 1, 3, r], "relu", InitSpec(seed=1))
    model = OscillatorModel(gamma, time_readout(r), r)
    U = np.random.default_rng(0).normal(size=(3, 6, 1))
    Y = oscillator_predict(model, U, 0.1)
    loss, grad = oscillator_loss_and_grad(model, U, Y, 2, dt=0.1)
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_loss_accepts_signals():
    r = 1
    gamma = init_mlp([3, 2, 1], "relu", InitSpec(seed=3))
    pi = init_mlp([3, 2, 1], "relu", InitSpec(seed=4))
    model = OscillatorModel(gamma, pi, r)
    rng = np.random.default_rng(1)
    us = [Signal(0.1, rng.normal(size=5)) for _ in range(2)]
    ys = [Signal(0.1, rng.normal(size=5)) for _ in range(2)]
    l1, g1 = oscillator_loss_and_grad(model, us, ys, 2)
    U = np.stack([s.values for s in us])
    Y = np.stack([s.values for s in ys])
    l2, g2 = oscillator_loss_and_grad(model, U, Y, 2, dt=0.1)
    assert l1 == l2 and np.array_equal(g1, g2)
    with pytest.raises(ValueError):
        oscillator_loss_and_grad(model, us, [Signal(0.2, s.values) for s in ys], 2)


def test_gradient_matches_finite_differences():
    res = gradcheck_suite(seed=1)
    assert res.passed, res.summary
    labels = {row["param"].split(".")[-1] for row in res.rows if row["judged"]}
    assert {"weight", "bias", "prelu", "bn_gamma", "bn_beta"} <= labels


def test_width_validation():
    with pytest.raises(ValueError):
        OscillatorModel(init_mlp([4, 3, 2], "relu"), time_readout(2), 2)
    with pytest.raises(ValueError):
        OscillatorModel(init_mlp([5, 3, 2], "relu"), time_readout(3), 2)


def test_blow_up_raises_integration_error():
    # x'' = 1e6 x grows like exp(1000 t)
    w = np.zeros((2, 3))
    w[0, 0], w[1, 0] = 1e6, -1e6
    w[0, 2], w[1, 2] = 1.0, -1.0
    gamma = MlpParams([Layer(w, np.zeros(2), "relu"), Layer(np.array([[1.0, -1.0]]), np.zeros(1), "linear")])
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(IntegrationError) as info:
        simulate_states(gamma, 1, np.ones((1, 2000)), 0.01)
    assert info.value.step > 0


def test_predict_chunking_is_invisible():
    r = 2
    model = OscillatorModel(init_mlp([5, 4, 2], "relu", InitSpec(seed=2)),
                            init_mlp([4, 4, 1], "relu", InitSpec(seed=3)), r)
    U = np.random.default_rng(5).normal(size=(7, 9, 1))
    assert np.array_equal(oscillator_predict(model, U, 0.05, chunk=3), oscillator_predict(model, U, 0.05))
