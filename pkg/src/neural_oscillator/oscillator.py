"""Neural oscillator ``x'' = Gamma(x, x', u)``, ``y = Pi(x, u(0), t)`` with zero
initial conditions, discretized by Heun's second-order Runge-Kutta step.

State ``z = [z1, z2] = [x, x']``.  Per step::

    k1 = [z2, Gamma(z1, z2, u_i)]
    k2 = [z2 + dt k1_2, Gamma(z1 + dt k1_1, z2 + dt k1_2, u_{i+1})]
    z_{i+1} = z_i + dt/2 (k1 + k2)

All samples of a batch are integrated together as ``(batch, r)`` arrays.  The
same code runs on plain arrays (inference) or on tape variables (training),
so both paths give bit-identical outputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from .fused import (COMPILED_MAX_BATCH, compiled_available, compiled_positions, fused_loss_and_grad,
                    fused_supported)
from .nets import MlpParams, mlp_forward, update_running_stats
from .signals import Signal

__all__ = [
    "OscillatorModel", "ForwardCache", "Signal", "IntegrationError",
    "oscillator_forward", "oscillator_predict", "oscillator_loss_and_grad",
    "stack_signals", "lr_loss", "simulate_states", "apply_batch_stats",
]


class IntegrationError(FloatingPointError):
    def __init__(self, step: int, message: str = ""):
        super().__init__(message or f"non-finite oscillator state at step {step}")
        self.step = step


@dataclass
class OscillatorModel:
    gamma: MlpParams
    pi: MlpParams
    r: int
    p: int = 1
    q: int = 1

    def __post_init__(self):
        if self.gamma.input_width != 2 * self.r + self.p or self.gamma.output_width != self.r:
            raise ValueError(
                f"Gamma widths {self.gamma.input_width}->{self.gamma.output_width} "
                f"do not fit r={self.r}, p={self.p}")
        if self.pi.input_width != self.r + self.p + 1 or self.pi.output_width != self.q:
            raise ValueError(
                f"Pi widths {self.pi.input_width}->{self.pi.output_width} "
                f"do not fit r={self.r}, p={self.p}, q={self.q}")

    def trainables(self) -> list[np.ndarray]:
        return self.gamma.trainables() + self.pi.trainables()

    @property
    def n_gamma_arrays(self) -> int:
        return len(self.gamma.trainables())

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.trainables()])

    def gamma_size(self) -> int:
        return sum(a.size for a in self.gamma.trainables())

    def with_trainables(self, arrays: Sequence[np.ndarray]) -> "OscillatorModel":
        k = self.n_gamma_arrays
        return OscillatorModel(self.gamma.with_trainables(arrays[:k]),
                               self.pi.with_trainables(arrays[k:]), self.r, self.p, self.q)

    def with_flat_params(self, theta: np.ndarray) -> "OscillatorModel":
        arrays, pos = [], 0
        for a in self.trainables():
            arrays.append(np.array(theta[pos:pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        if pos != len(theta):
            raise ValueError(f"expected {pos} parameters, got {len(theta)}")
        return self.with_trainables(arrays)

    def copy(self) -> "OscillatorModel":
        return OscillatorModel(self.gamma.copy(), self.pi.copy(), self.r, self.p, self.q)


@dataclass
class ForwardCache:
    z: np.ndarray  # (batch, n_times, 2r)
    pi_input: np.ndarray  # (batch, n_times, r+p+1)
    k1: list = field(default_factory=list)  # Gamma outputs at stage 1, per step
    k2: list = field(default_factory=list)  # Gamma outputs at stage 2, per step


def stack_signals(signals: Sequence[Signal]) -> tuple[np.ndarray, float]:
    """``(batch, n_times, dim)`` array plus the shared step; grids must agree."""
    if not signals:
        raise ValueError("empty batch")
    dt, n = signals[0].dt, signals[0].n_times
    for s in signals:
        if s.dt != dt or s.n_times != n or s.dim != signals[0].dim:
            raise ValueError("all signals in a batch must share one grid")
    return np.stack([s.values for s in signals]), dt


def _integrate(gamma: MlpParams, r: int, U: np.ndarray, dt: float, g_w,
               cache: Optional[ForwardCache]) -> list:
    """Heun steps from zero state; returns ``[x(t_0), ..., x(t_{N-1})]``."""
    L, N, _ = U.shape
    if N < 2:
        raise ValueError("input needs at least two time points")
    z1 = np.zeros((L, r))
    z2 = np.zeros((L, r))
    xs = [z1]
    zs = [np.concatenate([z1, z2], axis=1)] if cache is not None else None
    h, hh = 0.5 * dt, dt
    for i in range(N - 1):
        g1 = mlp_forward(gamma, dc.concat([z1, z2, U[:, i]], axis=1), "inference", g_w)
        a1 = dc.lincomb([(z1, 1.0), (z2, hh)])
        a2 = dc.lincomb([(z2, 1.0), (g1, hh)])
        g2 = mlp_forward(gamma, dc.concat([a1, a2, U[:, i + 1]], axis=1), "inference", g_w)
        z1 = dc.lincomb([(z1, 1.0), (z2, h), (a2, h)])
        z2 = dc.lincomb([(z2, 1.0), (g1, h), (g2, h)])
        v1, v2 = dc.value_of(z1), dc.value_of(z2)
        if not (np.isfinite(v1).all() and np.isfinite(v2).all()):
            raise IntegrationError(i + 1)
        xs.append(z1)
        if cache is not None:
            cache.k1.append(dc.value_of(g1))
            cache.k2.append(dc.value_of(g2))
            zs.append(np.concatenate([v1, v2], axis=1))
    if cache is not None:
        cache.z = np.stack(zs, axis=1)
    return xs


def simulate_states(gamma: MlpParams, r: int, U: np.ndarray, dt: float) -> np.ndarray:
    """Position trajectories ``x(t_i)`` of the second-order ODE, ``(batch, n_times, r)``."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 2:
        U = U[..., None]
    if gamma.input_width != 2 * r + U.shape[2] or gamma.output_width != r:
        raise ValueError("Gamma widths do not match the state and input dimensions")
    return np.stack(_integrate(gamma, r, U, dt, None, None), axis=1)


def _rollout(model: OscillatorModel, U: np.ndarray, dt: float, g_w, p_w, mode: str,
             stats_out, cache: Optional[ForwardCache]):
    L, N, p = U.shape
    if p != model.p:
        raise ValueError(f"input dimension {p} != model p={model.p}")
    if cache is None and g_w is None and L <= COMPILED_MAX_BATCH and compiled_available(model.gamma):
        X = compiled_positions(model.gamma, U, dt, model.r)
    else:
        X = dc.stack(_integrate(model.gamma, model.r, U, dt, g_w, cache), axis=1)  # (L, N, r)
    u0 = np.broadcast_to(U[:, :1, :], (L, N, p))
    t = np.broadcast_to((np.arange(N) * dt)[None, :, None], (L, N, 1))
    pin = dc.concat([X, u0, t], axis=2)
    y = mlp_forward(model.pi, pin, mode, p_w, stats_out)
    if cache is not None:
        cache.pi_input = dc.value_of(pin)
    return y


def oscillator_forward(model: OscillatorModel, u: Signal, mode: str = "inference"):
    """Simulate one input signal; returns ``(y, cache)``."""
    cache = ForwardCache(np.empty(0), np.empty(0))
    y = _rollout(model, u.values[None], u.dt, None, None, mode, None, cache)
    return Signal(u.dt, y[0]), cache


def oscillator_predict(model: OscillatorModel, U: np.ndarray, dt: float, chunk: int = 512) -> np.ndarray:
    """Inference-mode outputs for a batch ``U`` of shape ``(batch, n_times, p)``.

    Small batches use the compiled Gamma rollout when numba is available.
    """
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 2:
        U = U[..., None]
    out = [_rollout(model, U[s:s + chunk], dt, None, None, "inference", None, None)
           for s in range(0, U.shape[0], chunk)]
    return np.concatenate(out, axis=0)


def lr_loss(y, y_hat, r_power: int):
    """``sum |y - y_hat|^r / (L * I * q)`` with ``I = n_times - 1``."""
    yv = dc.value_of(y)
    L, N, q = yv.shape
    total = dc.sum(dc.abs_pow(dc.sub(y, y_hat), r_power))
    return dc.scale(total, 1.0 / (L * (N - 1) * q))


def oscillator_loss_and_grad(model: OscillatorModel, U, Y, r_power: int, dt: Optional[float] = None,
                             mode: str = "train", stats_out: Optional[list] = None, engine: str = "auto"):
    """ℓ_r loss of a batch and its gradient w.r.t. ``model.flat_params()``.

    ``U``/``Y`` are sequences of Signals or arrays ``(batch, n_times, dim)``
    (then ``dt`` is required).  Batch-norm layers of Pi use batch statistics
    in ``train`` mode; those statistics are appended to ``stats_out``.

    ``engine`` picks the reverse pass: ``tape`` records every operation on
    the generic tape, ``fused`` runs the hand-derived sweep in
    :mod:`.fused` (networks without batch norm only), and ``auto`` uses
    ``fused`` whenever it applies.
    """
    if engine not in ("auto", "tape", "fused"):
        raise ValueError(f"unknown engine {engine!r}")
    if r_power < 1:
        raise ValueError("loss power must be >= 1")
    if isinstance(U, np.ndarray):
        if dt is None:
            raise ValueError("dt is required for array inputs")
        U = U if U.ndim == 3 else U[..., None]
        Y = np.asarray(Y, dtype=np.float64)
        Y = Y if Y.ndim == 3 else Y[..., None]
    else:
        U, dt_u = stack_signals(U)
        Y, dt_y = stack_signals(Y)
        if dt_u != dt_y or (dt is not None and dt != dt_u):
            raise ValueError("input and target grids differ")
        dt = dt_u
    if U.shape[:2] != Y.shape[:2]:
        raise ValueError(f"inputs {U.shape} and targets {Y.shape} do not share a grid")
    if engine == "fused" or (engine == "auto" and fused_supported(model.gamma, model.pi)):
        if Y.shape != U.shape[:2] + (model.q,):
            raise ValueError(f"target shape {Y.shape} does not match the model output")
        return fused_loss_and_grad(model, U, Y, r_power, dt)
    tape = dc.Tape()
    k = model.n_gamma_arrays
    weights = tape.params(model.trainables())
    y = _rollout(model, U, dt, weights[:k], weights[k:], mode, stats_out, None)
    if dc.value_of(y).shape != Y.shape:
        raise ValueError(f"prediction shape {dc.value_of(y).shape} != target shape {Y.shape}")
    loss = lr_loss(y, Y, r_power)
    lv = float(loss.value)
    if not np.isfinite(lv):
        raise FloatingPointError("non-finite loss")
    return lv, tape.backward(loss)


def apply_batch_stats(model: OscillatorModel, stats: Sequence[tuple]) -> OscillatorModel:
    if not stats:
        return model
    return OscillatorModel(model.gamma, update_running_stats(model.pi, stats), model.r, model.p, model.q)
