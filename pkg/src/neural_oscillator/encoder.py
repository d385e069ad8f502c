"""Explicit sine-transform encoder and the input reconstruction built on it.

A one-hidden-layer ReLU network realizes, block by block,

    x_n'' = relu(-w_n^2 x_n + w_n u) - relu(w_n^2 x_n - w_n u) = -w_n^2 x_n + w_n u,

whose zero-initial-condition solution is the running sine transform
``L_t u(w_n) = int_0^t u(t - tau) sin(w_n tau) dtau``.  Those coefficients,
weighted by the Fourier data of a smooth one-sided bump ``rho_v``, rebuild
the input history ``u(tau)`` on ``[0, t]`` up to an explicit error bound.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from .nets import Layer, MlpParams
from .signals import Signal


@dataclass
class SineEncoderSpec:
    frequencies: np.ndarray
    p: int = 1

    def __post_init__(self):
        w = np.asarray(self.frequencies, dtype=np.float64)
        if w.ndim != 1 or len(w) < 2:
            raise ValueError("need at least two frequencies")
        if np.any(w <= 0) or len(np.unique(w)) != len(w):
            raise ValueError("frequencies must be distinct and positive")
        if self.p < 1:
            raise ValueError("input dimension must be positive")
        self.frequencies = w

    @property
    def M(self) -> int:
        return len(self.frequencies)

    @classmethod
    def default(cls, T: float, M: int, p: int = 1) -> "SineEncoderSpec":
        return cls(default_frequencies(T, M), p)


def default_frequencies(T: float, M: int) -> np.ndarray:
    """``w_n = pi n / (2T)``, n = 1..M."""
    return np.pi * np.arange(1, M + 1) / (2.0 * T)


def build_sine_encoder(spec: SineEncoderSpec) -> MlpParams:
    """Gamma with widths ``(p(2M+1), 2pM, pM)``.

    State ordering: ``x[k]`` with ``k = j*M + n`` holds mode ``n`` of input
    channel ``j``; the network input is ``[x, x', u]``.
    """
    M, p = spec.M, spec.p
    n_state = p * M
    W1 = np.zeros((2 * n_state, 2 * n_state + p))
    W2 = np.zeros((n_state, 2 * n_state))
    for j in range(p):
        for n, w in enumerate(spec.frequencies):
            k = j * M + n
            W1[2 * k, k] = -w * w
            W1[2 * k, 2 * n_state + j] = w
            W1[2 * k + 1, k] = w * w
            W1[2 * k + 1, 2 * n_state + j] = -w
            W2[k, 2 * k] = 1.0
            W2[k, 2 * k + 1] = -1.0
    return MlpParams([
        Layer(W1, np.zeros(2 * n_state), "relu"),
        Layer(W2, np.zeros(n_state), "linear"),
    ])


# ------------------------------------------------------------ sine transform
def _grid_index(u: Signal, t: float) -> int:
    i = int(round(t / u.dt))
    if i < 0 or i >= u.n_times or abs(i * u.dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t={t} is not a grid point of the signal")
    return i


def sine_transform_quadrature(u: Signal, omega: float, t: float) -> np.ndarray:
    """Composite trapezoid rule for ``int_0^t u(t - tau) sin(omega tau) dtau``."""
    i = _grid_index(u, t)
    if i == 0:
        return np.zeros(u.dim)
    tau = np.arange(i + 1) * u.dt
    f = u.values[i::-1] * np.sin(omega * tau)[:, None]
    return u.dt * (f.sum(axis=0) - 0.5 * (f[0] + f[-1]))


def sine_transform_trapezoid_series(values: np.ndarray, omega: float, dt: float) -> np.ndarray:
    """Trapezoid sine transform at every grid time for a scalar series.

    Same rule as :func:`sine_transform_quadrature`, evaluated as one discrete
    convolution.
    """
    u = np.asarray(values, dtype=np.float64)
    s = np.sin(omega * np.arange(len(u)) * dt)
    conv = np.convolve(u, s)[: len(u)]
    return dt * (conv - 0.5 * u[0] * s)


def sine_transform_piecewise_linear(values: np.ndarray, omegas: Sequence[float], dt: float) -> np.ndarray:
    """Exact sine transform of the piecewise-linear interpolant of ``values``.

    Steps ``x'' = -w^2 x + w u`` exactly across each interval where ``u`` is
    linear.  Returns an array ``(n_times, len(omegas))``.
    """
    u = np.asarray(values, dtype=np.float64)
    w = np.asarray(omegas, dtype=np.float64)
    c, s = np.cos(w * dt), np.sin(w * dt)
    x = np.zeros_like(w)
    v = np.zeros_like(w)
    out = np.zeros((len(u), len(w)))
    for i in range(len(u) - 1):
        # forcing w*u(s) = a + b s on the step; particular solution (a + b s)/w^2
        a = w * u[i]
        b = w * (u[i + 1] - u[i]) / dt
        A = x - a / w**2
        B = (v - b / w**2) / w
        x, v = (A * c + B * s + (a + b * dt) / w**2,
                w * (-A * s + B * c) + b / w**2)
        out[i + 1] = x
    return out


# ------------------------------------------------------------ mollifier
def _bump(x):
    """``exp(-1/(1 - x^2))`` on (-1, 1), zero outside."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def mollifier_c1() -> float:
    """Normalization of the unit bump: ``c_1 = (1/2) int_{-1}^{1} exp(-1/(1-x^2)) dx``."""
    val, err = integrate.quad(lambda x: float(_bump(x)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    return 0.5 * val


def mollifier(tau, v: float = 1.0):
    """``rho_v(tau) = c_v^{-1} exp(-v^2/(v^2 - (2 tau + v)^2))`` on ``[-v, 0]``."""
    x = (2.0 * np.asarray(tau, dtype=np.float64) + v) / v
    return _bump(x) / (mollifier_c1() * v)


def mollifier_derivative(tau, order: int):
    """Derivatives of the unit bump ``rho_1`` in ``tau`` (orders 0..3)."""
    x = 2.0 * np.asarray(tau, dtype=np.float64) + 1.0
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    d = 1.0 - xi**2
    e = np.exp(-1.0 / d) / mollifier_c1()
    g1 = -2.0 * xi / d**2
    g2 = -2.0 / d**2 - 8.0 * xi**2 / d**3
    g3 = -24.0 * xi / d**3 - 48.0 * xi**3 / d**4
    if order == 0:
        val = e
    elif order == 1:
        val = 2.0 * e * g1
    elif order == 2:
        val = 4.0 * e * (g2 + g1**2)
    elif order == 3:
        val = 8.0 * e * (g3 + 3.0 * g1 * g2 + g1**3)
    else:
        raise ValueError("orders 0..3 only")
    out[inside] = val
    return out


@lru_cache(maxsize=None)
def bump_derivative_max(order: int, n_grid: int = 100_000) -> float:
    """``max |rho_1^(order)|`` on ``[-1, 0]``: dense grid, then golden-section
    refinement around the best grid point."""
    tau = np.linspace(-1.0, 0.0, n_grid + 1)
    vals = np.abs(mollifier_derivative(tau, order))
    k = int(np.argmax(vals))
    lo, hi = tau[max(k - 1, 0)], tau[min(k + 1, n_grid)]
    f = lambda s: -abs(float(mollifier_derivative(np.array([s]), order)[0]))
    res = optimize.minimize_scalar(f, bracket=(lo, tau[k], hi), method="golden",
                                   options={"xtol": 1e-12})
    return max(float(vals[k]), -float(res.fun))


def c_rho2() -> float:
    return bump_derivative_max(2)


def c_rho3() -> float:
    return bump_derivative_max(3)


def bump_fourier(kappa, min_panels: int = 8, points: int = 20) -> np.ndarray:
    """``int_{-1}^{0} exp(-i kappa s) rho_1(s) ds`` by Gauss-Legendre panels.

    Uses at least ``points`` nodes per period of the integrand at the largest
    ``kappa``.
    """
    kappa = np.atleast_1d(np.asarray(kappa, dtype=np.float64))
    periods = float(np.max(np.abs(kappa))) / (2.0 * np.pi)
    n_panels = max(min_panels, int(np.ceil(periods)) + 1)
    nodes, weights = np.polynomial.legendre.leggauss(points)
    edges = np.linspace(-1.0, 0.0, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    s = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wq = (half[:, None] * weights[None, :]).ravel() * mollifier(s, 1.0)
    phase = np.outer(kappa, s)
    return (np.cos(phase) @ wq) - 1j * (np.sin(phase) @ wq)


@dataclass
class MollifierData:
    v: float
    T: float
    c_v: float
    alpha: np.ndarray
    theta: np.ndarray

    def to_json(self) -> str:
        d = asdict(self)
        d["alpha"] = [float(a) for a in self.alpha]
        d["theta"] = [float(a) for a in self.theta]
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "MollifierData":
        d = json.loads(text)
        return cls(d["v"], d["T"], d["c_v"], np.array(d["alpha"]), np.array(d["theta"]))


def mollifier_fourier(v: float, T: float, M: int, omegas=None) -> MollifierData:
    """Scaled modulus ``alpha_n = |H rho_v(w_n)|/T`` and phase ``theta_n`` with
    ``alpha_n sin(w tau - theta_n) = (Re H sin(w tau) + Im H cos(w tau)) / T``."""
    if not 0.0 < v < T:
        raise ValueError(f"need 0 < v < T, got v={v}, T={T}")
    w = default_frequencies(T, M) if omegas is None else np.asarray(omegas, dtype=np.float64)
    # rho_v(tau) = rho_1(tau / v) / v, so H rho_v(w) = H rho_1(w v)
    H = bump_fourier(w * v)
    if not np.all(np.isfinite(H)):
        n = int(np.flatnonzero(~np.isfinite(H))[0]) + 1
        raise FloatingPointError(f"Fourier quadrature failed for mode n={n}")
    alpha = np.abs(H) / T
    theta = np.arctan2(-H.imag, H.real)
    return MollifierData(float(v), float(T), mollifier_c1() * v, alpha, theta)


def reconstruct_input(coeffs, u0, data: MollifierData, omegas, t: float, tau_grid) -> np.ndarray:
    """``u(0) + sum_n alpha_n {x_n(t) + u(0)/w_n (cos w_n t - 1)} sin(w_n (t - tau) - theta_n)``.

    ``coeffs`` is ``(p, M)`` (or ``(M,)`` for scalar input); the result is
    ``(len(tau_grid), p)``.
    """
    w = np.asarray(omegas, dtype=np.float64)
    x = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    u0 = np.atleast_1d(np.asarray(u0, dtype=np.float64))
    if x.shape != (len(u0), len(w)) or len(data.alpha) != len(w):
        raise ValueError(f"coefficient shape {x.shape} does not match p={len(u0)}, M={len(w)}")
    tau = np.asarray(tau_grid, dtype=np.float64)
    if tau.size and (tau.min() < -1e-12 or tau.max() > t + 1e-12):
        raise ValueError("tau grid must lie in [0, t]")
    amp = data.alpha[None, :] * (x + u0[:, None] / w[None, :] * (np.cos(w * t) - 1.0)[None, :])
    basis = np.sin(w[None, :] * (t - tau[:, None]) - data.theta[None, :])  # (n_tau, M)
    return u0[None, :] + basis @ amp.T


# ------------------------------------------------------------ error bound
def epsilon_threshold(c_rho2_value: float) -> float:
    """Smallest admissible mode count is any M above ``16 c_rho2 / pi^2``."""
    return 16.0 * c_rho2_value / np.pi**2


def epsilon_k(L_K: float, p: int, T: float, M: int, c_rho2_value: float) -> tuple[float, float]:
    """Optimal bump width and the minimized bound for Lipschitz inputs.

    ``v = 2T (2 c / (pi^2 M))^(1/3)`` and
    ``eps = 54^(1/3) p L_K T c^(1/3) / (pi^(2/3) M^(1/3))``.
    """
    thr = epsilon_threshold(c_rho2_value)
    if not M > thr:
        raise ValueError(f"M={M} does not exceed the admissibility threshold {thr:.4f}")
    v = 2.0 * T * (2.0 * c_rho2_value / (np.pi**2 * M)) ** (1.0 / 3.0)
    eps = 54.0 ** (1.0 / 3.0) * p * L_K * T * c_rho2_value ** (1.0 / 3.0) / (np.pi ** (2.0 / 3.0) * M ** (1.0 / 3.0))
    return v, eps


def epsilon_of_v(v: float, L_K: float, p: int, T: float, M: int, c_rho2_value: float) -> float:
    """Bound before minimizing over the bump width: ``p L v + 8 T^3 p L c / (pi^2 v^2 M)``."""
    return p * L_K * v + 8.0 * T**3 * p * L_K * c_rho2_value / (np.pi**2 * v**2 * M)
