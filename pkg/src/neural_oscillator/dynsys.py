"""Target systems: the five-story Bouc-Wen shear building, classical RK4,
the running-maximum (extreme value) process, and a harness that checks the
Grönwall-type bound between two second-order systems driven by one input.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .oscillator import IntegrationError
from .signals import Signal


# ------------------------------------------------------------ structure
def damping_matrix(M: np.ndarray, K: np.ndarray, zeta: float) -> np.ndarray:
    """``C = M Phi diag(2 zeta w_i) Phi^T M`` with mass-normalized modes ``Phi``,
    so that every mode has damping ratio ``zeta``."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    w2, phi = linalg.eigh(K, M)
    if np.any(w2 <= 0):
        raise ValueError(f"stiffness has non-positive modal eigenvalue {w2.min():.3e}")
    w = np.sqrt(w2)
    C = M @ phi @ np.diag(2.0 * zeta * w) @ phi.T @ M
    return 0.5 * (C + C.T)


def modal_frequencies(M, K) -> tuple[np.ndarray, np.ndarray]:
    """Natural circular frequencies and mass-normalized mode shapes."""
    w2, phi = linalg.eigh(np.atleast_2d(K), np.atleast_2d(M))
    return np.sqrt(w2), phi


@dataclass(frozen=True)
class BoucWenConfig:
    m: float = 1382.4
    k: float = 1.7e6
    lam: float = 0.01
    beta: float = 2.0
    gamma: float = 2.0
    s: float = 3.0
    zeta: float = 0.05
    n_dof: int = 5

    def __post_init__(self):
        if not (self.m > 0 and self.k > 0):
            raise ValueError("mass and stiffness must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.s < 1:
            raise ValueError("exponent s must be >= 1")
        if not 0.0 <= self.zeta < 1.0:
            raise ValueError("damping ratio must lie in [0, 1)")

    @cached_property
    def mass(self) -> np.ndarray:
        return self.m * np.eye(self.n_dof)

    @cached_property
    def stiffness(self) -> np.ndarray:
        n, k = self.n_dof, self.k
        K = np.zeros((n, n))
        for i in range(n):
            K[i, i] = 2 * k if i < n - 1 else k
            if i + 1 < n:
                K[i, i + 1] = K[i + 1, i] = -k
        return K

    @cached_property
    def hysteretic_stiffness(self) -> np.ndarray:
        n, k = self.n_dof, self.k
        return k * (np.eye(n) - np.eye(n, k=1))

    @cached_property
    def damping(self) -> np.ndarray:
        return damping_matrix(self.mass, self.stiffness, self.zeta)

    @property
    def state_size(self) -> int:
        return 3 * self.n_dof


@dataclass
class BoucWenState:
    X: np.ndarray
    Xdot: np.ndarray
    Z: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.X, self.Xdot, self.Z], axis=-1)

    @classmethod
    def from_vector(cls, y: np.ndarray, n_dof: int = 5) -> "BoucWenState":
        y = np.asarray(y, dtype=np.float64)
        return cls(y[..., :n_dof], y[..., n_dof:2 * n_dof], y[..., 2 * n_dof:])

    @classmethod
    def zeros(cls, n_dof: int = 5) -> "BoucWenState":
        z = np.zeros(n_dof)
        return cls(z, z.copy(), z.copy())


def _interstory(a: np.ndarray) -> np.ndarray:
    d = a.copy()
    d[..., 1:] = a[..., 1:] - a[..., :-1]
    return d


def boucwen_rhs_vector(cfg: BoucWenConfig, y: np.ndarray, u_e) -> np.ndarray:
    """Time derivative of the stacked state ``[X, X', Z]``; leading axes batch."""
    n = cfg.n_dof
    X, V, Z = y[..., :n], y[..., n:2 * n], y[..., 2 * n:]
    u_e = np.asarray(u_e, dtype=np.float64)[..., None]
    force = V @ cfg.damping.T + cfg.lam * (X @ cfg.stiffness.T) \
        + (1.0 - cfg.lam) * (Z @ cfg.hysteretic_stiffness.T)
    acc = -u_e - force / cfg.m
    dv = _interstory(V)
    absZ = np.abs(Z)
    zdot = dv - cfg.beta * np.abs(dv) * absZ ** (cfg.s - 1.0) * Z - cfg.gamma * dv * absZ ** cfg.s
    return np.concatenate([V, acc, zdot], axis=-1)


def boucwen_rhs(cfg: BoucWenConfig, state: BoucWenState, u_e: float) -> BoucWenState:
    d = boucwen_rhs_vector(cfg, state.to_vector(), u_e)
    return BoucWenState.from_vector(d, cfg.n_dof)


# ------------------------------------------------------------ integration
InputLike = Union[Signal, np.ndarray, Callable[[float], np.ndarray]]


def rk4_integrate(rhs: Callable, u: InputLike, z0, dt: float, n_steps: Optional[int] = None) -> np.ndarray:
    """Classical RK4 for ``z' = rhs(z, u(t))`` on ``t_i = i dt``.

    ``u`` is a Signal, an array with time on axis 0, or a callable of ``t``.
    Sampled inputs are linearly interpolated at half steps.  Returns the
    trajectory with time on axis 0 (``n_steps + 1`` points).
    """
    if callable(u) and not isinstance(u, (Signal, np.ndarray)):
        if n_steps is None:
            raise ValueError("n_steps is required for a callable input")
        at = lambda i: u(i * dt)
        half = lambda i: u((i + 0.5) * dt)
    else:
        if isinstance(u, Signal):
            if abs(u.dt - dt) > 1e-12 * dt:
                raise ValueError(f"integration step {dt} differs from the input grid {u.dt}")
            vals = u.values[:, 0] if u.dim == 1 else u.values
        else:
            vals = np.asarray(u, dtype=np.float64)
        n_avail = len(vals) - 1
        n_steps = n_avail if n_steps is None else n_steps
        if n_steps > n_avail:
            raise ValueError("input shorter than the requested number of steps")
        at = lambda i: vals[i]
        half = lambda i: 0.5 * (vals[i] + vals[i + 1])
    z = np.array(z0, dtype=np.float64)
    out = np.empty((n_steps + 1,) + z.shape)
    out[0] = z
    h2 = 0.5 * dt
    for i in range(n_steps):
        u0, um, u1 = at(i), half(i), at(i + 1)
        k1 = rhs(z, u0)
        k2 = rhs(z + h2 * k1, um)
        k3 = rhs(z + h2 * k2, um)
        k4 = rhs(z + dt * k3, u1)
        z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise IntegrationError(i + 1, f"non-finite state at RK4 step {i + 1}")
        out[i + 1] = z
    return out


def simulate_boucwen(cfg: BoucWenConfig, U, dt: float) -> np.ndarray:
    """Responses to a batch of ground accelerations ``U`` (batch, n_times).

    Returns states ``(batch, n_times, 15)`` ordered ``[X, X', Z]``.
    """
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    z0 = np.zeros((U.shape[0], cfg.state_size))
    traj = rk4_integrate(lambda z, ue: boucwen_rhs_vector(cfg, z, ue), U.T, z0, dt)
    return np.transpose(traj, (1, 0, 2))


def extreme_value_process(x):
    """Running maximum of ``|x|`` along time (axis 0 for Signals, last axis
    for arrays)."""
    if isinstance(x, Signal):
        return Signal(x.dt, np.maximum.accumulate(np.abs(x.values), axis=0))
    return np.maximum.accumulate(np.abs(np.asarray(x, dtype=np.float64)), axis=-1)


def trajectory_csv(times: np.ndarray, states: np.ndarray, n_dof: int = 5) -> str:
    """CSV text with header ``t, X1..Xn, V1..Vn, Z1..Zn``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"X{i}" for i in range(1, n_dof + 1)]
               + [f"V{i}" for i in range(1, n_dof + 1)] + [f"Z{i}" for i in range(1, n_dof + 1)])
    for t, row in zip(times, states):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return buf.getvalue()


# ------------------------------------------------------------ perturbation bound
@dataclass
class PerturbationReport:
    observed_sup_diff: float
    bound_value: float
    lipschitz_L: float
    max_rhs_gap: float
    holds: bool

    def to_dict(self) -> dict:
        return {"observed_sup_diff": self.observed_sup_diff, "bound_value": self.bound_value,
                "lipschitz_L": self.lipschitz_L, "max_rhs_gap": self.max_rhs_gap,
                "holds": self.holds}


def perturbation_bound_check(g1: Callable, g2: Callable, L1, inputs: Sequence[InputLike], T: float,
                             r: int = 1, dt: float = 1e-3, margin: float = 1e-3) -> PerturbationReport:
    """Compare two systems ``x'' = g(x, x', u)`` from rest under shared inputs.

    ``L1`` is either ``L_g1`` itself or the pair ``(L_x, L_v)`` of Lipschitz
    constants in the L1 norm, combined as ``max(L_x, L_v + 1)``.  The bound is
    ``exp(T L) T max_tau |g2 - g1|_1`` with the gap evaluated along the second
    system's trajectory; ``holds`` allows a relative ``margin`` for
    discretization error.
    """
    if np.ndim(L1) == 0:
        L = float(L1)
    else:
        lx, lv = L1
        L = max(float(lx), float(lv) + 1.0)
    n_steps = int(round(T / dt))

    def first_order(g):
        def f(z, uv):
            x, v = z[..., :r], z[..., r:]
            return np.concatenate([v, np.asarray(g(x, v, uv), dtype=np.float64).reshape(v.shape)], axis=-1)
        return f

    observed, gap = 0.0, 0.0
    for u in inputs:
        z0 = np.zeros(2 * r)
        z1 = rk4_integrate(first_order(g1), u, z0, dt, n_steps)
        z2 = rk4_integrate(first_order(g2), u, z0, dt, n_steps)
        observed = max(observed, float(np.max(np.sum(np.abs(z2 - z1), axis=-1))))
        if callable(u) and not isinstance(u, (Signal, np.ndarray)):
            uvals = [u(i * dt) for i in range(n_steps + 1)]
        else:
            vals = u.values if isinstance(u, Signal) else np.asarray(u, dtype=np.float64)
            uvals = [vals[i] for i in range(n_steps + 1)]
        for zi, ui in zip(z2, uvals):
            x, v = zi[:r], zi[r:]
            d = np.asarray(g2(x, v, ui), dtype=np.float64) - np.asarray(g1(x, v, ui), dtype=np.float64)
            gap = max(gap, float(np.sum(np.abs(d))))
    bound = float(np.exp(T * L) * T * gap)
    return PerturbationReport(observed, bound, L, gap, observed <= bound * (1.0 + margin))
