"""Self-checks that compare the implementation against independent routes:
finite differences, sine-transform quadrature, and the perturbation bound."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diffcore import finite_difference_gradient
from .dynsys import perturbation_bound_check
from .encoder import SineEncoderSpec, build_sine_encoder, sine_transform_trapezoid_series
from .nets import InitSpec, init_mlp
from .oscillator import OscillatorModel, oscillator_loss_and_grad, simulate_states
from .stochastic import SeededRng


@dataclass
class SuiteResult:
    name: str
    rows: list = field(default_factory=list)
    passed: bool = True
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "summary": self.summary, "rows": self.rows}


# ------------------------------------------------------------ gradients
def gradcheck_model(seed: int = 0, r: int = 2, hidden: int = 4) -> OscillatorModel:
    """Small oscillator with PReLU in both networks and batch norm in Pi."""
    gamma = init_mlp([2 * r + 1, hidden, r], "prelu", InitSpec("uniform_fanin", seed))
    pi = init_mlp([r + 2, hidden, 1], "prelu", InitSpec("uniform_fanin", seed + 1), batchnorm=True)
    # move slopes and affine params off their defaults so every gradient is generic
    gen = SeededRng(seed, 99).generator()
    for layer in gamma.layers + pi.layers:
        layer.bias[:] = gen.uniform(-0.3, 0.3, layer.bias.size)
        if layer.prelu_alpha is not None:
            layer.prelu_alpha[:] = gen.uniform(0.1, 0.4, 1)
        if layer.batchnorm is not None:
            layer.batchnorm.gamma[:] = gen.uniform(0.7, 1.3, hidden)
            layer.batchnorm.beta[:] = gen.uniform(-0.2, 0.2, hidden)
    return OscillatorModel(gamma, pi, r, 1, 1)


def _param_labels(model: OscillatorModel) -> list[str]:
    labels = []
    for net_name, net in (("gamma", model.gamma), ("pi", model.pi)):
        for j, layer in enumerate(net.layers):
            labels += [f"{net_name}.{j}.weight"] * layer.weight.size
            labels += [f"{net_name}.{j}.bias"] * layer.bias.size
            if layer.prelu_alpha is not None:
                labels += [f"{net_name}.{j}.prelu"]
            if layer.batchnorm is not None:
                labels += [f"{net_name}.{j}.bn_gamma"] * layer.batchnorm.gamma.size
                labels += [f"{net_name}.{j}.bn_beta"] * layer.batchnorm.beta.size
    return labels


def gradcheck_suite(seed: int = 0, n_steps: int = 3, batch: int = 3, dt: float = 1.0,
                    h: float = 1e-6, tolerance: float = 1e-5, loss_power: int = 2) -> SuiteResult:
    """Tape gradient against central differences on an ``n_steps`` rollout.

    The relative error is ``|a - f| / max(|a|, |f|)``.  Coordinates where both
    magnitudes sit below the rounding floor of the difference quotient,
    ``8 eps |loss| / h``, are reported but not judged; in this model those are
    the biases feeding train-mode batch norm, whose gradient is exactly zero.
    A unit step keeps Gamma's influence on a three-step rollout well above
    that floor (with small steps it shrinks like ``dt**2``).
    """
    model = gradcheck_model(seed)
    gen = SeededRng(seed, 7).generator()
    U = gen.uniform(-1.0, 1.0, (batch, n_steps + 1, 1))
    Y = gen.uniform(-1.0, 1.0, (batch, n_steps + 1, 1))
    theta = model.flat_params()
    loss0, analytic = oscillator_loss_and_grad(model, U, Y, loss_power, dt=dt)
    tiny = max(1e-10, 8.0 * np.finfo(float).eps * abs(loss0) / h)

    def f(th):
        return oscillator_loss_and_grad(model.with_flat_params(th), U, Y, loss_power, dt=dt)[0]

    numeric = finite_difference_gradient(f, theta, h)
    res = SuiteResult("gradcheck")
    worst = 0.0
    for k, label in enumerate(_param_labels(model)):
        a, n = float(analytic[k]), float(numeric[k])
        scale = max(abs(a), abs(n))
        judged = bool(scale >= tiny)
        rel = abs(a - n) / scale if scale > 0 else 0.0
        ok = (rel < tolerance) if judged else True
        if judged:
            worst = max(worst, rel)
        res.passed &= ok
        res.rows.append({"index": k, "param": label, "analytic": a, "numeric": n,
                         "rel_error": rel, "judged": judged, "passed": ok})
    res.summary = {"n_params": int(theta.size), "worst_rel_error": worst, "tolerance": tolerance,
                   "h": h, "n_steps": n_steps, "dt": dt, "rounding_floor": tiny,
                   "not_judged": [r["param"] for r in res.rows if not r["judged"]]}
    return res


# ------------------------------------------------------------ encoder equivalence
def band_limited_inputs(seed: int, n_inputs: int, times: np.ndarray, n_terms: int = 5,
                        band_hz: Sequence[float] = (0.05, 2.0)) -> np.ndarray:
    """Sums of ``n_terms`` sinusoids with frequencies in ``band_hz``,
    amplitudes in [-1, 1] and uniform phases; one stream per input."""
    lo, hi = band_hz
    out = np.empty((n_inputs, len(times)))
    for l in range(n_inputs):
        a = SeededRng(seed, l).uniform(3 * n_terms)
        f = lo + (hi - lo) * a[:n_terms]
        amp = 2.0 * a[n_terms:2 * n_terms] - 1.0
        ph = 2.0 * np.pi * a[2 * n_terms:]
        out[l] = (amp[:, None] * np.sin(2 * np.pi * f[:, None] * times[None] + ph[:, None])).sum(axis=0)
    return out


def encoder_equivalence_suite(seed: int = 3, omegas: Sequence[float] = (np.pi / 20, np.pi / 2, np.pi, 2 * np.pi),
                              n_inputs: int = 20, T: float = 2.0, dt: float = 1e-3, t_min: float = 0.1,
                              tolerance: float = 1e-4) -> SuiteResult:
    """Integrate the hand-built sine encoder with the oscillator's RK2 scheme
    and compare against trapezoid quadrature of the sine transform.

    Error per (input, frequency): ``max_{t >= t_min} |x - q| / max_{t >= t_min} |q|``.
    """
    omegas = np.asarray(omegas, dtype=np.float64)
    n = int(round(T / dt)) + 1
    t = np.arange(n) * dt
    U = band_limited_inputs(seed, n_inputs, t)
    gamma = build_sine_encoder(SineEncoderSpec(omegas, 1))
    X = simulate_states(gamma, len(omegas), U, dt)
    mask = t >= t_min - 1e-12
    res = SuiteResult("encoder_equivalence")
    for k, w in enumerate(omegas):
        errs = []
        for l in range(n_inputs):
            q = sine_transform_trapezoid_series(U[l], w, dt)[mask]
            errs.append(float(np.max(np.abs(X[l, mask, k] - q)) / np.max(np.abs(q))))
        worst = max(errs)
        ok = worst < tolerance
        res.passed &= ok
        res.rows.append({"omega": float(w), "worst_rel_error": worst, "mean_rel_error": float(np.mean(errs)),
                         "passed": ok})
    res.summary = {"T": T, "dt": dt, "t_min": t_min, "n_inputs": n_inputs, "tolerance": tolerance}
    return res


# ------------------------------------------------------------ perturbation bound
def _harmonic_inputs(gen: np.random.Generator, n: int):
    c = gen.uniform(0.0, 1.0, (n, 3))
    return [lambda t, a=a: a[0] * np.sin(2 * np.pi * (0.2 + a[1]) * t + 6.0 * a[2]) for a in c]


def perturbation_suite(seed: int = 5, n_pairs: int = 20, T: float = 1.0, dt: float = 1e-3,
                       margin: float = 1e-3) -> SuiteResult:
    """The closed-form perturbed linear oscillator plus ``n_pairs`` random
    stable linear systems with bounded nonlinear perturbations."""
    res = SuiteResult("perturbation_bound")
    delta = 0.01
    rep = perturbation_bound_check(lambda x, v, u: -x, lambda x, v, u: -x + delta, (1.0, 0.0),
                                   [lambda t: np.zeros(1)], T, r=1, dt=dt, margin=margin)
    res.rows.append({"instance": "closed_form", "r": 1, **rep.to_dict()})
    res.passed &= rep.holds
    for k in range(n_pairs):
        gen = SeededRng(seed, k).generator()
        r = int(gen.integers(1, 4))
        q, _ = np.linalg.qr(gen.standard_normal((r, r)))
        A = q @ np.diag(gen.uniform(0.5, 4.0, r)) @ q.T
        B = np.diag(gen.uniform(0.1, 1.0, r))
        c = gen.uniform(-1.0, 1.0, r)
        eps = float(gen.uniform(0.001, 0.05))
        P = gen.uniform(-1.0, 1.0, (r, r))

        def g1(x, v, u, A=A, B=B, c=c):
            return -A @ x - B @ v + c * float(np.ravel(u)[0])

        def g2(x, v, u, g1=g1, P=P, eps=eps):
            return g1(x, v, u) + eps * np.sin(P @ x + v)

        # induced L1 norms (max column sums)
        Lx = float(np.abs(A).sum(axis=0).max())
        Lv = float(np.abs(B).sum(axis=0).max())
        rep = perturbation_bound_check(g1, g2, (Lx, Lv), _harmonic_inputs(gen, 2), T, r=r, dt=dt,
                                       margin=margin)
        res.rows.append({"instance": f"random_{k}", "r": r, **rep.to_dict()})
        res.passed &= rep.holds
    res.summary = {"T": T, "dt": dt, "margin": margin, "n_instances": len(res.rows)}
    return res
