"""Compiled Heun rollout and reverse sweep for a one-hidden-layer Gamma.

Scalar loops over samples, steps and units, compiled with numba.  Arrays
are sample-major: ``IN``/``PRE`` are ``(batch, 2, n_steps, width)`` with stage 0 at the step start and stage 1
at the predictor point.  Activation codes: 0 relu, 1 prelu, 2 linear.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _act(s, code, alpha):
    if code == 0:
        return s if s > 0.0 else 0.0
    if code == 1:
        return s if s > 0.0 else alpha * s
    return s


@njit(cache=True)
def _dact(s, code, alpha):
    if code == 0:
        return 1.0 if s > 0.0 else 0.0
    if code == 1:
        return 1.0 if s > 0.0 else alpha
    return 1.0


@njit(cache=True)
def _gamma_eval(W1, b1, W2, b2, code, alpha, x, pre, hid, out):
    w, din = W1.shape
    for j in range(w):
        s = b1[j]
        for m in range(din):
            s += W1[j, m] * x[m]
        pre[j] = s
        hid[j] = _act(s, code, alpha)
    for k in range(W2.shape[0]):
        s = b2[k]
        for j in range(w):
            s += W2[k, j] * hid[j]
        out[k] = s


@njit(cache=True)
def rollout_forward(W1, b1, W2, b2, code, alpha, U, dt, IN, PRE, X):
    """Fill ``X`` with positions; returns the first non-finite step or 0."""
    L, N, p = U.shape
    w = W1.shape[0]
    r = W2.shape[0]
    h = 0.5 * dt
    z1 = np.zeros(r)
    z2 = np.zeros(r)
    g1 = np.zeros(r)
    g2 = np.zeros(r)
    a2 = np.zeros(r)
    hid = np.zeros(w)
    bad = 0
    for l in range(L):
        z1[:] = 0.0
        z2[:] = 0.0
        X[l, 0, :] = 0.0
        for i in range(N - 1):
            x = IN[l, 0, i]
            for k in range(r):
                x[k] = z1[k]
                x[r + k] = z2[k]
            for k in range(p):
                x[2 * r + k] = U[l, i, k]
            _gamma_eval(W1, b1, W2, b2, code, alpha, x, PRE[l, 0, i], hid, g1)
            x = IN[l, 1, i]
            for k in range(r):
                x[k] = z1[k] + z2[k] * dt
                a2[k] = z2[k] + g1[k] * dt
                x[r + k] = a2[k]
            for k in range(p):
                x[2 * r + k] = U[l, i + 1, k]
            _gamma_eval(W1, b1, W2, b2, code, alpha, x, PRE[l, 1, i], hid, g2)
            finite = True
            for k in range(r):
                z1[k] = z1[k] + z2[k] * h + a2[k] * h
                z2[k] = z2[k] + g1[k] * h + g2[k] * h
                if not (np.isfinite(z1[k]) and np.isfinite(z2[k])):
                    finite = False
            if not finite:
                if bad == 0 or i + 1 < bad:
                    bad = i + 1
                break
            X[l, i + 1, :] = z1
    return bad


@njit(cache=True)
def rollout_positions(W1, b1, W2, b2, code, alpha, U, dt, X):
    """Inference-only rollout: fills ``X`` without keeping intermediates."""
    L, N, p = U.shape
    w, din = W1.shape
    r = W2.shape[0]
    h = 0.5 * dt
    z1 = np.zeros(r)
    z2 = np.zeros(r)
    g1 = np.zeros(r)
    g2 = np.zeros(r)
    a2 = np.zeros(r)
    x = np.zeros(din)
    pre = np.zeros(w)
    hid = np.zeros(w)
    bad = 0
    for l in range(L):
        z1[:] = 0.0
        z2[:] = 0.0
        X[l, 0, :] = 0.0
        for i in range(N - 1):
            for k in range(r):
                x[k] = z1[k]
                x[r + k] = z2[k]
            for k in range(p):
                x[2 * r + k] = U[l, i, k]
            _gamma_eval(W1, b1, W2, b2, code, alpha, x, pre, hid, g1)
            for k in range(r):
                x[k] = z1[k] + z2[k] * dt
                a2[k] = z2[k] + g1[k] * dt
                x[r + k] = a2[k]
            for k in range(p):
                x[2 * r + k] = U[l, i + 1, k]
            _gamma_eval(W1, b1, W2, b2, code, alpha, x, pre, hid, g2)
            finite = True
            for k in range(r):
                z1[k] = z1[k] + z2[k] * h + a2[k] * h
                z2[k] = z2[k] + g1[k] * h + g2[k] * h
                if not (np.isfinite(z1[k]) and np.isfinite(z2[k])):
                    finite = False
            if not finite:
                if bad == 0 or i + 1 < bad:
                    bad = i + 1
                break
            X[l, i + 1, :] = z1
    return bad


@njit(cache=True)
def _gamma_back(W1, W2, code, alpha, pre, gout, ghid, gin):
    w, din = W1.shape
    r = W2.shape[0]
    for m in range(din):
        gin[m] = 0.0
    for j in range(w):
        s = 0.0
        for k in range(r):
            s += gout[k] * W2[k, j]
        ghid[j] = s
        g = s * _dact(pre[j], code, alpha)
        for m in range(din):
            gin[m] += g * W1[j, m]


@njit(cache=True)
def rollout_backward(W1, W2, code, alpha, PRE, gX, dt, GOUT, GHID):
    """Reverse sweep given the adjoint ``gX`` of the positions.

    Stores the adjoints of Gamma's output (``GOUT``) and hidden activations
    (``GHID``) per stage, step and sample; weight gradients follow from
    these by matrix products outside the loop.
    """
    L, N, r = gX.shape
    w, din = W1.shape
    h = 0.5 * dt
    gx = np.zeros(r)
    gv = np.zeros(r)
    g_a1 = np.zeros(r)
    g_a2 = np.zeros(r)
    gin = np.zeros(din)
    for l in range(L):
        gx[:] = 0.0
        gv[:] = 0.0
        for i in range(N - 2, -1, -1):
            gout = GOUT[l, 1, i]
            for k in range(r):
                gx[k] += gX[l, i + 1, k]
                gout[k] = h * gv[k]
            _gamma_back(W1, W2, code, alpha, PRE[l, 1, i], gout, GHID[l, 1, i], gin)
            gout = GOUT[l, 0, i]
            for k in range(r):
                g_a1[k] = gin[k]
                g_a2[k] = h * gx[k] + gin[r + k]
                gout[k] = h * gv[k] + dt * g_a2[k]
            _gamma_back(W1, W2, code, alpha, PRE[l, 0, i], gout, GHID[l, 0, i], gin)
            for k in range(r):
                nx = gx[k] + g_a1[k] + gin[k]
                gv[k] = gv[k] + h * gx[k] + dt * g_a1[k] + g_a2[k] + gin[r + k]
                gx[k] = nx
