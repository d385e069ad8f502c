import numpy as np
import pytest
from scipy import integrate

from neural_oscillator.encoder import (MollifierData, SineEncoderSpec, build_sine_encoder, c_rho2,
                                       default_frequencies, epsilon_k, epsilon_of_v, epsilon_threshold,
                                       mollifier, mollifier_c1, mollifier_derivative, mollifier_fourier,
                                       reconstruct_input, sine_transform_piecewise_linear,
                                       sine_transform_quadrature, sine_transform_trapezoid_series)
from neural_oscillator.nets import mlp_forward
from neural_oscillator.oscillator import simulate_states
from neural_oscillator.signals import Signal


def test_encoder_widths():
    net = build_sine_encoder(SineEncoderSpec.default(10.0, 5))
    assert net.widths == [11, 10, 5]
    net2 = build_sine_encoder(SineEncoderSpec.default(10.0, 4, p=2))
    assert net2.widths == [2 * 9, 16, 8]


def test_encoder_formula():
    net = build_sine_encoder(SineEncoderSpec(np.array([2.0, 3.0])))
    out = mlp_forward(net, np.array([0.3, -0.1, 123.0, -7.0, 0.7]))
    assert out[0] == pytest.approx(-4 * 0.3 + 2 * 0.7, abs=1e-15)
    assert out[1] == pytest.approx(-9 * -0.1 + 3 * 0.7, abs=1e-15)


def test_spec_validation():
    with pytest.raises(ValueError):
        SineEncoderSpec(np.array([1.0]))
    with pytest.raises(ValueError):
        SineEncoderSpec(np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        SineEncoderSpec(np.array([1.0, -2.0]))


def test_default_grid():
    assert np.allclose(default_frequencies(2.0, 3), np.pi * np.array([1, 2, 3]) / 4)


def test_step_response_closed_form():
    dt = 1e-3
    t = np.arange(1001) * dt
    X = simulate_states(build_sine_encoder(SineEncoderSpec(np.array([np.pi, 2 * np.pi]))), 2,
                        np.ones((1, len(t))), dt)
    assert X[0, -1, 0] == pytest.approx(2 / np.pi, abs=1e-6)


def test_quadrature_examples():
    dt = 1e-3
    one = Signal(dt, np.ones(1001))
    assert sine_transform_quadrature(one, np.pi, 1.0)[0] == pytest.approx(2 / np.pi, abs=1e-6)
    t = np.arange(int(round(np.pi / dt)) + 1) * dt
    s = Signal(dt, np.sin(t))
    val = sine_transform_quadrature(s, 1.0, t[-1])[0]
    exact = 0.5 * (np.sin(t[-1]) - t[-1] * np.cos(t[-1]))
    assert val == pytest.approx(exact, abs=1e-6)
    assert sine_transform_quadrature(Signal(dt, np.zeros(11)), 3.0, 0.01)[0] == 0.0


def test_quadrature_rejects_off_grid_time():
    with pytest.raises(ValueError):
        sine_transform_quadrature(Signal(0.1, np.ones(11)), 1.0, 0.55)


def test_trapezoid_series_matches_pointwise_rule():
    rng = np.random.default_rng(0)
    dt = 0.01
    u = rng.normal(size=200)
    series = sine_transform_trapezoid_series(u, 2.5, dt)
    sig = Signal(dt, u)
    for i in (0, 1, 7, 150, 199):
        assert series[i] == pytest.approx(sine_transform_quadrature(sig, 2.5, i * dt)[0], abs=1e-13)


def test_piecewise_linear_transform_exact_for_linear_input():
    dt = 0.05
    t = np.arange(41) * dt
    w = 1.7
    exact = t / w - np.sin(w * t) / w**2  # int_0^t (t - s) sin(w s) ds
    got = sine_transform_piecewise_linear(t, [w], dt)[:, 0]
    assert np.allclose(got, exact, atol=1e-13)


def test_c1_value():
    assert mollifier_c1() == pytest.approx(0.221997, abs=1e-6)


def test_mollifier_normalized():
    for v in (0.1, 0.7, 2.0):
        val, _ = integrate.quad(lambda s: float(mollifier(np.array([s]), v)[0]), -v, 0.0, epsabs=1e-13)
        assert val == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_mollifier_derivatives_match_differences(order):
    tau = np.linspace(-0.9, -0.1, 17)
    h = 1e-4
    lower = mollifier_derivative(tau, order - 1)
    fd = (mollifier_derivative(tau + h, order - 1) - mollifier_derivative(tau - h, order - 1)) / (2 * h)
    assert np.allclose(mollifier_derivative(tau, order), fd, rtol=1e-5, atol=1e-6 * np.abs(lower).max())


def test_c_rho2_independent_maximization():
    # second differences of the normalized bump; rounding noise is about eps * |rho| / h^2
    tau = np.linspace(-1.0, 0.0, 200_001)
    h = tau[1] - tau[0]
    rho = mollifier(tau, 1.0)
    d2 = (rho[2:] - 2 * rho[1:-1] + rho[:-2]) / h**2
    assert np.abs(d2).max() == pytest.approx(c_rho2(), rel=1e-6)
    # the refined maximum dominates the analytic derivative on an offset grid
    off = np.linspace(-1.0, 0.0, 333_334)[1:-1] + 1.3e-7
    assert c_rho2() >= np.abs(mollifier_derivative(off, 2)).max()


def test_alpha_bound_and_phase_identity():
    T, M, v = 1.0, 64, 0.3
    data = mollifier_fourier(v, T, M)
    assert np.all(data.alpha <= 1.0 / T + 1e-15)
    # direct quadrature of H rho_v at one frequency
    w = default_frequencies(T, M)[5]
    re, _ = integrate.quad(lambda s: float(np.cos(w * s) * mollifier(np.array([s]), v)[0]), -v, 0, epsabs=1e-13)
    im, _ = integrate.quad(lambda s: float(-np.sin(w * s) * mollifier(np.array([s]), v)[0]), -v, 0, epsabs=1e-13)
    assert data.alpha[5] == pytest.approx(np.hypot(re, im) / T, abs=1e-12)
    assert data.theta[5] == pytest.approx(np.arctan2(-im, re), abs=1e-10)
    assert MollifierData.from_json(data.to_json()).alpha.tolist() == data.alpha.tolist()


def test_mollifier_fourier_rejects_wide_bump():
    with pytest.raises(ValueError):
        mollifier_fourier(2.0, 1.0, 8)


def test_constant_input_reconstructed_exactly():
    T, M = 1.0, 300
    w = default_frequencies(T, M)
    data = mollifier_fourier(0.2, T, M)
    for c in (0.0, 1.7, -4.0):
        t = 0.6
        coeffs = c / w * (1 - np.cos(w * t))  # exact transform of a constant
        rec = reconstruct_input(coeffs[None], [c], data, w, t, np.linspace(0, t, 31))
        assert np.allclose(rec, c, atol=1e-12)


def test_ramp_reconstruction_below_bound():
    T, M = 1.0, 256
    v, eps = epsilon_k(1.0, 1, T, M, c_rho2())
    w = default_frequencies(T, M)
    data = mollifier_fourier(v, T, M)
    dt = 1e-3
    grid = np.arange(1001) * dt
    coeffs = sine_transform_piecewise_linear(grid, w, dt)
    worst = 0.0
    for i in range(50, 1001, 50):
        tau = np.linspace(0, grid[i], 501)
        rec = reconstruct_input(coeffs[i][None], [0.0], data, w, grid[i], tau)[:, 0]
        worst = max(worst, np.abs(rec - tau).max())
    assert worst <= eps


def test_epsilon_scaling_and_stationarity():
    c = c_rho2()
    v1, e1 = epsilon_k(1.0, 1, 1.0, 300, c)
    _, e8 = epsilon_k(1.0, 1, 1.0, 2400, c)
    assert e1 / e8 == pytest.approx(2.0, rel=1e-12)
    h = 1e-6 * v1
    d = (epsilon_of_v(v1 + h, 1, 1, 1.0, 300, c) - epsilon_of_v(v1 - h, 1, 1, 1.0, 300, c)) / (2 * h)
    assert abs(d) < 1e-6
    assert epsilon_of_v(v1, 1, 1, 1.0, 300, c) == pytest.approx(e1, rel=1e-12)


def test_epsilon_threshold_rejects_small_M():
    c = c_rho2()
    thr = epsilon_threshold(c)
    assert thr == pytest.approx(16 * c / np.pi**2)
    with pytest.raises(ValueError, match="threshold"):
        epsilon_k(1.0, 1, 1.0, int(thr), c)
