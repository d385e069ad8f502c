"""Relative error metrics, log-log decay fits, and the reports that compare
measured errors against the theoretical rates."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .encoder import (c_rho2, default_frequencies, epsilon_k, epsilon_threshold,
                      mollifier_fourier, sine_transform_piecewise_linear)
from .oscillator import OscillatorModel, oscillator_predict
from .signals import Signal


@dataclass
class ErrorSummary:
    rel_linf: float
    rel_l2: float
    n_samples: int
    n_times: int
    dt: Optional[float] = None

    def to_dict(self) -> dict:
        return {"rel_linf": self.rel_linf, "rel_l2": self.rel_l2, "n_samples": self.n_samples,
                "n_times": self.n_times, "dt": self.dt}


def _as_array(x) -> np.ndarray:
    if isinstance(x, Signal):
        return x.values[None]
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], Signal):
        return np.stack([s.values for s in x])
    a = np.asarray(x, dtype=np.float64)
    return a


def relative_errors(preds, targets, dt: Optional[float] = None) -> ErrorSummary:
    """Global ``max|pred - target| / max|target|`` and root-sum-square ratio,
    both taken jointly over all samples and grid points."""
    P, Y = _as_array(preds), _as_array(targets)
    if P.shape != Y.shape:
        raise ValueError(f"prediction shape {P.shape} != target shape {Y.shape}")
    denom_inf = float(np.max(np.abs(Y))) if Y.size else 0.0
    if denom_inf == 0.0:
        raise ValueError("targets are identically zero; relative error undefined")
    diff = P - Y
    rel_inf = float(np.max(np.abs(diff))) / denom_inf
    rel_2 = float(np.sqrt(np.sum(diff * diff)) / np.sqrt(np.sum(Y * Y)))
    n_samples = Y.shape[0] if Y.ndim >= 2 else 1
    n_times = Y.shape[1] if Y.ndim >= 2 else Y.shape[0]
    return ErrorSummary(rel_inf, rel_2, int(n_samples), int(n_times), dt)


@dataclass
class DecayFit:
    x: list
    y: list
    slope: float
    intercept: float
    r_squared: float
    reference_slope: Optional[float] = None

    def to_dict(self) -> dict:
        return {"x": list(map(float, self.x)), "y": list(map(float, self.y)), "slope": self.slope,
                "intercept": self.intercept, "r_squared": self.r_squared,
                "reference_slope": self.reference_slope}

    def predict(self, x) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(x, dtype=np.float64) ** self.slope


def fit_decay_rate(sizes: Sequence[float], errors: Sequence[float],
                   reference_slope: Optional[float] = None) -> DecayFit:
    """Ordinary least squares of ``log error`` on ``log size``."""
    x = np.asarray(sizes, dtype=np.float64)
    y = np.asarray(errors, dtype=np.float64)
    if x.size < 2 or x.size != y.size:
        raise ValueError("need at least two (size, error) points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("sizes and errors must be positive for a log-log fit")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    if np.any(np.diff(x) <= 0):
        raise ValueError("sizes must be distinct")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-24 else 0.0)
    return DecayFit(x.tolist(), y.tolist(), float(slope), float(intercept), float(r2), reference_slope)


def depth_decay_rate(p: int, M_gamma: int) -> float:
    """Depth decay exponent ``-1 / (p (M + 1) + 1)``."""
    return -1.0 / (p * (M_gamma + 1) + 1)


WIDTH_DECAY_RATE = -0.5
RECONSTRUCTION_DECAY_RATE = -1.0 / 3.0


def points_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


# ------------------------------------------------------------ sine reconstruction
@dataclass
class PiecewiseLinear:
    """Continuous piecewise-linear function through ``(knots, values)``."""

    name: str
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must increase")

    def __call__(self, t):
        return np.interp(t, self.knots, self.values)

    @property
    def lipschitz(self) -> float:
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.knots))))


def default_lipschitz_family(T: float = 1.0) -> list[PiecewiseLinear]:
    """Five piecewise-linear inputs on ``[0, T]`` with Lipschitz constant 1.

    Every steep piece spans most of the horizon.  At admissible mode counts
    the optimal bump width is a large fraction of ``T``, and the error only
    follows its asymptotic rate once features are wider than that.
    """
    return [
        PiecewiseLinear("ramp", [0.0, T], [0.0, T]),
        PiecewiseLinear("offset_descent", [0.0, T], [1.0, 1.0 - 0.5 * T]),
        PiecewiseLinear("late_peak", [0.0, 0.9 * T, T], [0.0, 0.9 * T, 0.8 * T]),
        PiecewiseLinear("early_knee", [0.0, 0.1 * T, T], [0.3, 0.3 + 0.02 * T, 0.3 + 0.92 * T]),
        PiecewiseLinear("late_plateau", [0.0, 0.8 * T, T], [-0.4 * T, 0.4 * T, 0.4 * T]),
    ]


def short_scale_family(T: float = 1.0, seed: int = 11) -> list[PiecewiseLinear]:
    """Inputs with kinks every ``T/10``; their error saturates at the
    admissible bump widths (reported for contrast, not fitted)."""
    from .stochastic import SeededRng
    k = np.linspace(0.0, T, 11)
    return [
        PiecewiseLinear("tent", [0.0, 0.5 * T, T], [0.0, 1.0, 0.0]),
        PiecewiseLinear("zigzag", k, 0.5 + 0.3 * (-1.0) ** np.arange(11)),
        PiecewiseLinear("random_knots", k, SeededRng(seed, 0).uniform(11, -1.0, 1.0)),
    ]


@dataclass
class ReconstructionDecayReport:
    T: float
    L_K: float
    c_rho2: float
    threshold: float
    M_used: list = field(default_factory=list)
    v: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    per_function: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    notices: list = field(default_factory=list)
    fit: Optional[DecayFit] = None

    @property
    def bound_holds(self) -> bool:
        return all(e <= b * (1.0 + 1e-6) for e, b in zip(self.errors, self.bounds))

    def to_dict(self) -> dict:
        return {"T": self.T, "L_K": self.L_K, "c_rho2": self.c_rho2, "threshold": self.threshold,
                "M_used": self.M_used, "v": self.v, "errors": self.errors,
                "per_function": self.per_function, "bounds": self.bounds,
                "skipped": self.skipped, "notices": self.notices,
                "bound_holds": self.bound_holds,
                "fit": None if self.fit is None else self.fit.to_dict()}


def reconstruction_sup_error(family: Sequence[PiecewiseLinear], M: int, v: float, T: float,
                             dt: float = 1e-3, t_stride: int = 20, n_tau: int = 1001) -> list[float]:
    """Sup over sampled ``t`` and ``tau in [0, t]`` of ``|u(tau) - u_hat_t(tau)|``
    for each function, using exact sine-transform coefficients."""
    w = default_frequencies(T, M)
    data = mollifier_fourier(v, T, M)
    n = int(round(T / dt))
    grid = np.arange(n + 1) * dt
    coeffs = np.stack([sine_transform_piecewise_linear(f(grid), w, dt) for f in family])  # (F, N, M)
    u0 = np.array([float(f(0.0)) for f in family])
    errs = np.zeros(len(family))
    for i in range(t_stride, n + 1, t_stride):
        t = grid[i]
        tau = np.linspace(0.0, t, n_tau)
        basis = np.sin(w[None, :] * (t - tau[:, None]) - data.theta[None, :])
        amp = data.alpha[None, :] * (coeffs[:, i, :] + u0[:, None] / w[None, :] * (np.cos(w * t) - 1.0))
        uhat = u0[None, :] + basis @ amp.T  # (n_tau, F)
        truth = np.stack([f(tau) for f in family], axis=1)
        errs = np.maximum(errs, np.abs(uhat - truth).max(axis=0))
    return errs.tolist()


def lemma1_decay_report(family: Sequence[PiecewiseLinear], M_list: Sequence[int], T: float = 1.0,
                        dt: float = 1e-3, t_stride: int = 20, n_tau: int = 1001) -> ReconstructionDecayReport:
    """Reconstruction error versus mode count against the minimized bound.

    Mode counts at or below the admissibility threshold are skipped with a
    notice; the slope is fitted on the remaining points.
    """
    L_K = max(f.lipschitz for f in family)
    c2 = c_rho2()
    rep = ReconstructionDecayReport(T, L_K, c2, epsilon_threshold(c2))
    for M in M_list:
        try:
            v, eps = epsilon_k(L_K, 1, T, M, c2)
        except ValueError as exc:
            rep.skipped.append(int(M))
            rep.notices.append(str(exc))
            continue
        errs = reconstruction_sup_error(family, M, v, T, dt, t_stride, n_tau)
        rep.M_used.append(int(M))
        rep.v.append(float(v))
        rep.per_function.append({f.name: e for f, e in zip(family, errs)})
        rep.errors.append(float(max(errs)))
        rep.bounds.append(float(eps))
    if len(rep.M_used) >= 2 and all(e > 0 for e in rep.errors):
        rep.fit = fit_decay_rate(rep.M_used, rep.errors, RECONSTRUCTION_DECAY_RATE)
    return rep


# ------------------------------------------------------------ trained models
@dataclass
class DecayReport:
    sizes: list
    summaries: list
    fit_linf: Optional[DecayFit]
    fit_l2: Optional[DecayFit]

    def to_dict(self) -> dict:
        return {"sizes": self.sizes, "summaries": [s.to_dict() for s in self.summaries],
                "fit_linf": None if self.fit_linf is None else self.fit_linf.to_dict(),
                "fit_l2": None if self.fit_l2 is None else self.fit_l2.to_dict()}

    def points(self) -> list[dict]:
        return [{"size": float(x), "rel_linf": s.rel_linf, "rel_l2": s.rel_l2}
                for x, s in zip(self.sizes, self.summaries)]


def decay_experiment_report(models: Sequence[OscillatorModel], sizes: Sequence[float], U, Y, dt: float,
                            reference_slope: Optional[float] = None, predictions=None) -> DecayReport:
    """Relative errors of each model over one evaluation pool plus log-log fits.

    ``predictions`` may supply precomputed outputs (one array per model).
    """
    U = np.asarray(U, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if U.shape[:2] != Y.shape[:2]:
        raise ValueError("evaluation inputs and targets use different grids")
    summaries = []
    for k, model in enumerate(models):
        P = oscillator_predict(model, U, dt) if predictions is None else np.asarray(predictions[k])
        if P.shape != Y.reshape(P.shape).shape:
            raise ValueError("prediction grid differs from the evaluation grid")
        summaries.append(relative_errors(P, Y.reshape(P.shape), dt))
    fit_inf = fit_l2 = None
    if len(models) >= 2:
        fit_inf = fit_decay_rate(sizes, [s.rel_linf for s in summaries], reference_slope)
        fit_l2 = fit_decay_rate(sizes, [s.rel_l2 for s in summaries], reference_slope)
    return DecayReport([float(s) for s in sizes], summaries, fit_inf, fit_l2)
