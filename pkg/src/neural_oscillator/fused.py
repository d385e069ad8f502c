"""Hand-derived reverse pass through the Heun rollout for networks without
batch normalization.

Two implementations share one contract.  The numpy sweep repeats the tape's
forward arithmetic operation by operation, so its losses are bit-identical
to the tape, and it gathers weight gradients once after the reverse sweep
from the stored pre-activation adjoints.  When numba is importable and Gamma
has a single hidden layer, the Gamma rollout and its reverse sweep can run
as compiled loops instead (:mod:`._kernels`); sums are then taken in a
different order, so values agree with the tape to rounding only.  The
compiled loops cost time linear in the batch while the numpy sweep amortizes
its per-step overhead, so by default they are used for small batches only.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .nets import MlpParams

__all__ = ["fused_supported", "fused_loss_and_grad", "compiled_available", "compiled_positions"]

try:
    from . import _kernels
except ImportError:  # numba missing: the numpy sweep still works
    _kernels = None

_ACT_CODES = {"relu": 0, "prelu": 1, "linear": 2}
# measured crossover is near 150 samples on one core
COMPILED_MAX_BATCH = 64


def compiled_available(gamma: MlpParams) -> bool:
    return (_kernels is not None and len(gamma.layers) == 2
            and all(layer.batchnorm is None for layer in gamma.layers))


def fused_supported(gamma: MlpParams, pi: MlpParams) -> bool:
    return all(layer.batchnorm is None for layer in gamma.layers + pi.layers)


def _act(pre: np.ndarray, layer) -> np.ndarray:
    if layer.activation == "relu":
        return np.maximum(pre, 0.0)
    if layer.activation == "prelu":
        return np.maximum(pre, 0.0) + layer.prelu_alpha * np.minimum(pre, 0.0)
    return pre


def _act_back(g: np.ndarray, pre: np.ndarray, layer) -> np.ndarray:
    if layer.activation == "relu":
        return g * (pre > 0.0)
    if layer.activation == "prelu":
        return np.where(pre > 0.0, g, g * layer.prelu_alpha)
    return g


class _NetTrace:
    """Inputs and pre-activations of every layer for a stack of evaluations."""

    def __init__(self, net: MlpParams, lead: tuple):
        self.net = net
        self.inputs = [np.empty(lead + (layer.in_width,)) for layer in net.layers]
        self.pre = [np.empty(lead + (layer.out_width,)) for layer in net.layers]
        self.gpre = [np.empty(lead + (layer.out_width,)) for layer in net.layers]
        self.galpha = [np.zeros(1) if layer.prelu_alpha is not None else None for layer in net.layers]

    def forward(self, x: np.ndarray, at) -> np.ndarray:
        h = x
        for j, layer in enumerate(self.net.layers):
            self.inputs[j][at] = h
            pre = h @ layer.weight.T + layer.bias
            self.pre[j][at] = pre
            h = _act(pre, layer)
        return h

    def backward(self, g: np.ndarray, at) -> np.ndarray:
        for j in range(len(self.net.layers) - 1, -1, -1):
            layer = self.net.layers[j]
            pre = self.pre[j][at]
            if layer.activation == "prelu":
                self.galpha[j] += np.sum(g * np.minimum(pre, 0.0))
            g = _act_back(g, pre, layer)
            self.gpre[j][at] = g
            g = g @ layer.weight
        return g

    def gradients(self) -> list[np.ndarray]:
        out = []
        for j, layer in enumerate(self.net.layers):
            gp = self.gpre[j].reshape(-1, layer.out_width)
            x = self.inputs[j].reshape(-1, layer.in_width)
            out += [gp.T @ x, gp.sum(axis=0)]
            if layer.prelu_alpha is not None:
                out.append(self.galpha[j])
        return out


def _compiled_forward(gamma: MlpParams, U: np.ndarray, dt: float, r: int):
    first, second = gamma.layers
    L, N, _ = U.shape
    code = _ACT_CODES[first.activation]
    alpha = float(first.prelu_alpha[0]) if first.prelu_alpha is not None else 0.0
    # sample-major so each rollout walks contiguous memory
    IN = np.empty((L, 2, N - 1, first.in_width))
    PRE = np.empty((L, 2, N - 1, first.out_width))
    X = np.empty((L, N, r))
    c = np.ascontiguousarray
    bad = _kernels.rollout_forward(c(first.weight), c(first.bias), c(second.weight), c(second.bias), code, alpha,
                                   np.ascontiguousarray(U, dtype=np.float64), dt, IN, PRE, X)
    return X, (code, alpha, IN, PRE), bad


def _compiled_backward(gamma: MlpParams, trace, gX: np.ndarray, dt: float) -> list[np.ndarray]:
    first, second = gamma.layers
    code, alpha, IN, PRE = trace
    GOUT = np.empty(PRE.shape[:-1] + (second.out_width,))
    GHID = np.empty(PRE.shape)
    _kernels.rollout_backward(np.ascontiguousarray(first.weight), np.ascontiguousarray(second.weight),
                              code, alpha, PRE, np.ascontiguousarray(gX), dt, GOUT, GHID)
    pre = PRE.reshape(-1, first.out_width)
    ghid = GHID.reshape(-1, first.out_width)
    gout = GOUT.reshape(-1, second.out_width)
    gpre = _act_back(ghid, pre, first)
    out = [gpre.T @ IN.reshape(-1, first.in_width), gpre.sum(axis=0)]
    if first.prelu_alpha is not None:
        out.append(np.array([np.sum(ghid * np.minimum(pre, 0.0))]))
    return out + [gout.T @ _act(pre, first), gout.sum(axis=0)]


def compiled_positions(gamma: MlpParams, U: np.ndarray, dt: float, r: int) -> np.ndarray:
    """Positions ``(batch, n_times, r)`` from the compiled inference rollout."""
    from .oscillator import IntegrationError

    first, second = gamma.layers
    c = np.ascontiguousarray
    alpha = float(first.prelu_alpha[0]) if first.prelu_alpha is not None else 0.0
    X = np.empty((U.shape[0], U.shape[1], r))
    with np.errstate(over="ignore", invalid="ignore"):
        bad = _kernels.rollout_positions(c(first.weight), c(first.bias), c(second.weight), c(second.bias),
                                         _ACT_CODES[first.activation], alpha, c(U, dtype=np.float64), dt, X)
    if bad:
        raise IntegrationError(bad)
    return X


def _numpy_forward(gam: _NetTrace, U: np.ndarray, dt: float, r: int, X: np.ndarray) -> None:
    from .oscillator import IntegrationError

    L = U.shape[0]
    h, hh = 0.5 * dt, dt
    z1 = np.zeros((L, r))
    z2 = np.zeros((L, r))
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(U.shape[1] - 1):
            g1 = gam.forward(np.concatenate([z1, z2, U[:, i]], axis=1), (0, i))
            a1 = z1 + z2 * hh
            a2 = z2 + g1 * hh
            g2 = gam.forward(np.concatenate([a1, a2, U[:, i + 1]], axis=1), (1, i))
            z1 = z1 + z2 * h + a2 * h
            z2 = z2 + g1 * h + g2 * h
            if not (np.isfinite(z1).all() and np.isfinite(z2).all()):
                raise IntegrationError(i + 1)
            X[:, i + 1] = z1


def fused_loss_and_grad(model, U: np.ndarray, Y: np.ndarray, r_power: int, dt: float,
                        compiled: Optional[bool] = None):
    """ℓ_r loss and flat gradient for arrays ``U``, ``Y`` of shape ``(batch, n_times, dim)``.

    ``compiled`` forces (True) or forbids (False) the compiled Gamma sweep;
    the default uses it when available and the batch has at most
    ``COMPILED_MAX_BATCH`` samples.
    """
    from .oscillator import IntegrationError

    if not fused_supported(model.gamma, model.pi):
        raise ValueError("the fused reverse pass does not handle batch normalization")
    L, N, p = U.shape
    r = model.r
    if N < 2:
        raise ValueError("input needs at least two time points")
    if compiled is None:
        compiled = compiled_available(model.gamma) and L <= COMPILED_MAX_BATCH
    elif compiled and not compiled_available(model.gamma):
        raise ValueError("the compiled sweep needs numba and a one-hidden-layer Gamma")
    h, hh = 0.5 * dt, dt
    if compiled:
        with np.errstate(over="ignore", invalid="ignore"):
            X, trace, bad = _compiled_forward(model.gamma, U, dt, r)
        if bad:
            raise IntegrationError(bad)
    else:
        # stage 0 evaluates Gamma at the step start, stage 1 at the predictor point
        gam = _NetTrace(model.gamma, (2, N - 1, L))
        X = np.empty((L, N, r))
        X[:, 0] = 0.0
        _numpy_forward(gam, U, dt, r, X)

    u0 = np.broadcast_to(U[:, :1, :], (L, N, p))
    t = np.broadcast_to((np.arange(N) * dt)[None, :, None], (L, N, 1))
    pin = np.concatenate([X, u0, t], axis=2)
    pi = _NetTrace(model.pi, (L, N))
    y = pi.forward(pin, ...)
    d = y - Y
    c = 1.0 / (L * (N - 1) * y.shape[2])
    if r_power == 2:
        loss = float(np.sum(d * d) * c)
        gy = c * (2.0 * d)
    else:
        loss = float(np.sum(np.abs(d) ** r_power) * c)
        gy = c * (r_power * np.abs(d) ** (r_power - 1) * np.sign(d)) if r_power > 1 else c * np.sign(d)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    gX = pi.backward(gy, ...)[..., :r]
    if compiled:
        return loss, np.concatenate([g.ravel() for g in _compiled_backward(model.gamma, trace, gX, dt)
                                     + pi.gradients()])

    # reverse sweep over the Heun steps; (gx, gv) is the adjoint of (z1, z2)
    gx = np.zeros((L, r))
    gv = np.zeros((L, r))
    for i in range(N - 2, -1, -1):
        gx = gx + gX[:, i + 1]
        gin2 = gam.backward(h * gv, (1, i))
        g_a1 = gin2[:, :r]
        g_a2 = h * gx + gin2[:, r:2 * r]
        gin1 = gam.backward(h * gv + hh * g_a2, (0, i))
        gx, gv = (gx + g_a1 + gin1[:, :r],
                  gv + h * gx + hh * g_a1 + g_a2 + gin1[:, r:2 * r])
    grads = gam.gradients() + pi.gradients()
    return loss, np.concatenate([g.ravel() for g in grads])
