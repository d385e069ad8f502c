"""One test per acceptance criterion, each printing a single verdict line."""
import json
import time

import numpy as np
import pytest

from neural_oscillator.config import apply_overrides, load_config
from neural_oscillator.dynsys import BoucWenConfig, boucwen_rhs_vector, rk4_integrate
from neural_oscillator.experiments import run_experiment
from neural_oscillator.stochastic import make_spectrum_grid, sample_harmonizable_batch, variance_by_quadrature
from neural_oscillator.verification import encoder_equivalence_suite, gradcheck_suite, perturbation_suite
from neural_oscillator.analysis import default_lipschitz_family, lemma1_decay_report

from conftest import ACCEPTANCE_LINES
from oracles import modal_damping_ratios, modal_harmonic_response


def verdict(k: int, ok: bool, detail: str, elapsed: float, limit: float) -> None:
    in_time = elapsed < limit
    line = (f"CRITERION {k}: {'PASS' if ok and in_time else 'FAIL'}  {detail}  "
            f"[{elapsed:.1f} s, limit {limit:.0f} s]")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert in_time, line


def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    res = gradcheck_suite(seed=0, tolerance=1e-5)
    kinds = {row["param"].split(".")[-1] for row in res.rows if row["judged"]}
    ok = res.passed and {"weight", "bias", "prelu", "bn_gamma", "bn_beta"} <= kinds
    verdict(1, ok, f"worst relative error {res.summary['worst_rel_error']:.2e} over "
                   f"{res.summary['n_params']} parameters (tolerance 1e-5)", time.perf_counter() - t0, 10)


def test_criterion_02_encoder_equivalence():
    t0 = time.perf_counter()
    res = encoder_equivalence_suite(seed=3, n_inputs=20, dt=1e-3, t_min=0.1, tolerance=1e-4)
    worst = max(r["worst_rel_error"] for r in res.rows)
    verdict(2, res.passed, f"worst relative error {worst:.2e} over 4 frequencies x 20 inputs (tolerance 1e-4)",
            time.perf_counter() - t0, 30)


def test_criterion_03_sine_reconstruction_decay():
    t0 = time.perf_counter()
    rep = lemma1_decay_report(default_lipschitz_family(1.0), [16, 64, 256, 1024], 1.0)
    ok = rep.bound_holds and rep.fit is not None and rep.fit.slope <= -0.28
    detail = (f"M used {rep.M_used}, skipped {rep.skipped} (below admissibility threshold "
              f"{rep.threshold:.1f}); errors {[f'{e:.3g}' for e in rep.errors]} vs bounds "
              f"{[f'{b:.3g}' for b in rep.bounds]}; slope {rep.fit.slope if rep.fit else float('nan'):.3f}")
    verdict(3, ok, detail, time.perf_counter() - t0, 120)


def test_criterion_04_perturbation_bound():
    t0 = time.perf_counter()
    res = perturbation_suite(seed=5, n_pairs=20, T=1.0)
    closed = res.rows[0]
    ok = res.passed and len(res.rows) == 21
    ok &= abs(closed["observed_sup_diff"] - 0.0130) < 1e-4 and abs(closed["bound_value"] - 0.0272) < 1e-4
    verdict(4, ok, f"{sum(r['holds'] for r in res.rows)}/21 instances hold; closed form observed "
                   f"{closed['observed_sup_diff']:.4f} vs bound {closed['bound_value']:.4f}",
            time.perf_counter() - t0, 60)


def test_criterion_05_rk4_order():
    t0 = time.perf_counter()
    one = rk4_integrate(lambda y, u: y, lambda t: 0.0, np.array([1.0]), 0.1, n_steps=1)[1, 0]
    errs = []
    for dt in (0.1, 0.05):
        z = rk4_integrate(lambda y, u: -y, lambda t: 0.0, np.array([1.0]), dt, n_steps=int(round(1 / dt)))
        errs.append(abs(z[-1, 0] - np.exp(-1.0)))
    order = float(np.log2(errs[0] / errs[1]))
    ok = abs(one - 1.10517083) < 1e-8 and 3.8 <= order <= 4.2
    verdict(5, ok, f"single step {one:.10f}, observed order {order:.3f}", time.perf_counter() - t0, 1)


def test_criterion_06_damping_synthesis():
    t0 = time.perf_counter()
    cfg = BoucWenConfig()
    ratios = modal_damping_ratios(cfg.mass, cfg.stiffness, cfg.damping)
    dev = float(np.max(np.abs(ratios - 0.05)))
    verdict(6, dev <= 1e-10, f"max deviation from 0.05: {dev:.1e}", time.perf_counter() - t0, 1)


def test_criterion_07_linear_limit():
    t0 = time.perf_counter()
    cfg = BoucWenConfig(lam=1.0)
    terms = [(20.0, "sin", 0.4 * np.pi), (-15.0, "cos", 0.8 * np.pi), (30.0, "sin", 1.2 * np.pi),
             (10.0, "cos", 1.6 * np.pi), (-25.0, "sin", 2.0 * np.pi)]

    def u(t):
        return sum(c * (np.sin(w * t) if k == "sin" else np.cos(w * t)) for c, k, w in terms)

    dt = 0.005
    n = int(round(10.0 / dt))
    traj = rk4_integrate(lambda z, ue: boucwen_rhs_vector(cfg, z, ue), u, np.zeros(15), dt, n_steps=n)
    ref = modal_harmonic_response(cfg.mass, cfg.stiffness, cfg.zeta, terms, np.arange(n + 1) * dt)
    rel = float(np.max(np.abs(traj[:, :5] - ref)) / np.max(np.abs(ref)))
    verdict(7, rel <= 1e-6, f"relative L-inf error {rel:.2e} at dt={dt}", time.perf_counter() - t0, 5)


def test_criterion_08_harmonizable_variance():
    t0 = time.perf_counter()
    grid = make_spectrum_grid()
    U = sample_harmonizable_batch(2024, range(10_000), grid)
    parts, ok = [], True
    for t in (1.0, 3.0, 5.0):
        col = U[:, int(round(t / grid.dt))]
        target = variance_by_quadrature(t)
        rel = abs(col.var() - target) / target
        ok &= rel <= 0.05
        parts.append(f"t={t:g}: {rel:.3%}")
    verdict(8, ok, "variance deviation " + ", ".join(parts), time.perf_counter() - t0, 60)


@pytest.fixture(scope="session")
def case2_runs(tmp_path_factory):
    runs = {}

    def get(which: str):
        if which not in runs:
            out = tmp_path_factory.mktemp(f"case2_{which}")
            t0 = time.perf_counter()
            run_experiment(load_config("case2_desk"), out)
            runs[which] = (out, time.perf_counter() - t0)
        return runs[which]

    return get


def test_criterion_09_case2_width_decay(case2_runs):
    out, elapsed = case2_runs("first")
    fit = json.loads((out / "decay_fit.json").read_text())["linf"]
    slope = fit["slope"]
    ok = -0.9 <= slope <= -0.15
    verdict(9, ok, f"widths {fit['x']}: relative L-inf errors {[f'{e:.3g}' for e in fit['y']]}, "
                   f"fitted slope {slope:.3f} (band [-0.9, -0.15])", elapsed, 1800)


def test_criterion_10_case1_training_smoke(tmp_path):
    t0 = time.perf_counter()
    cfg = apply_overrides(load_config("case1_desk"), [
        "data.pool_size=200", "data.n_select=40", "model.pi_depths=[1, 2]",
        "train.epochs=300", "train.batch_size=32"])
    out = run_experiment(cfg, tmp_path / "case1")
    manifest = json.loads((out / "manifest.json").read_text())
    rows = (out / "train" / "depth_1.csv").read_text().splitlines()[1:]
    losses = [float(r.split(",")[2]) for r in rows]
    reduction = losses[0] / losses[-1]
    clips = json.loads((out / "clip_thresholds.json").read_text())
    gap = manifest["results"]["deepening"][0]["max_abs_output_change"]
    ok = (reduction >= 10 and gap <= 1e-12 and clips["pi_param_counts"] == [92, 203]
          and np.allclose(clips["pi_thresholds"], [1.0, np.sqrt(203 / 92)], rtol=1e-15)
          and cfg["train"]["loss_power"] == 8 and len(losses) == 300)
    verdict(10, ok, f"32 training samples, depth-1 loss {losses[0]:.3e} -> {losses[-1]:.3e} "
                    f"({reduction:.1f}x); deepening output change {gap:.1e}; Pi clip thresholds "
                    f"{[round(c, 4) for c in clips['pi_thresholds']]}", time.perf_counter() - t0, 900)


def test_criterion_11_end_to_end_determinism(case2_runs):
    first, t_first = case2_runs("first")
    second, elapsed = case2_runs("second")
    names = sorted(p.relative_to(first).as_posix() for p in first.rglob("*")
                   if p.suffix in (".csv", ".json") and p.name != "timings.json")
    differing = [n for n in names if (first / n).read_bytes() != (second / n).read_bytes()]
    ok = bool(names) and not differing
    verdict(11, ok, f"{len(names)} CSV/JSON artifacts compared, {len(differing)} differ {differing[:3]}",
            elapsed, 2 * t_first)
