"""Experiment runners: data generation, training sweeps, verification suites
and the artifact directory they write."""
from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
import traceback
import zipfile
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .analysis import (RECONSTRUCTION_DECAY_RATE, WIDTH_DECAY_RATE, decay_experiment_report, default_lipschitz_family,
                       lemma1_decay_report, short_scale_family, depth_decay_rate)
from .config import dumps, train_fields
from .dynsys import BoucWenConfig, extreme_value_process, simulate_boucwen
from .nets import InitSpec, count_params, deepen_identity, init_mlp
from .oscillator import OscillatorModel, oscillator_predict
from .plots import loglog_svg
from .signals import time_grid
from .stochastic import (SeededRng, harmonic_excitation, make_spectrum_grid, sample_harmonic_coefficients,
                         sample_harmonizable_batch, spectral_mass_coverage)
from .training import (Dataset, TrainConfig, build_case1_dataset, build_case2_dataset, model_to_dict, train)
from .verification import encoder_equivalence_suite, gradcheck_suite, perturbation_suite

# init streams sit far from sample streams and shuffle streams
INIT_SEED_OFFSET = 1_000_003
ZIP_DATE = (1980, 1, 1, 0, 0, 0)
SIM_CHUNK = 250


# ------------------------------------------------------------ artifact writing
def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def rows_csv(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
    """CSV with ``repr`` floats (round-trip exact) and lowercase booleans."""
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        out = []
        for c in columns:
            v = r[c]
            if isinstance(v, (bool, np.bool_)):
                out.append("true" if v else "false")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(v)
        w.writerow(out)
    return buf.getvalue()


def write_npz(path: Path, arrays: dict) -> None:
    """Uncompressed ``.npz`` with fixed member timestamps, so equal arrays
    give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_DATE)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


class ArtifactDir:
    """Output directory plus bookkeeping for the manifest and timings."""

    def __init__(self, root, log: Optional[Callable[[str], None]] = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.timings: dict = {}
        self.log = log or (lambda msg: None)

    def _track(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def text(self, name: str, content: str) -> None:
        self._track(name).write_text(content)

    def json(self, name: str, obj) -> None:
        self.text(name, _json_text(obj))

    def npz(self, name: str, arrays: dict) -> None:
        write_npz(self._track(name), arrays)

    def timed(self, stage: str):
        art = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()
                art.log(f"[{stage}] start")

            def __exit__(self, *exc):
                dt = time.perf_counter() - self.t0
                art.timings[stage] = round(dt, 3)
                art.log(f"[{stage}] {dt:.1f} s")
                return False

        return _Timer()


def versions() -> dict:
    try:
        from numba import __version__ as numba_version
    except ImportError:
        numba_version = None
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba_version, "neural_oscillator": __version__}


# ------------------------------------------------------------ data generation
def simulate_top_floor(cfg: BoucWenConfig, U: np.ndarray, dt: float) -> np.ndarray:
    """Top-floor displacement X5 for each input row, simulated in chunks."""
    out = np.empty(U.shape)
    for s in range(0, U.shape[0], SIM_CHUNK):
        out[s:s + SIM_CHUNK] = simulate_boucwen(cfg, U[s:s + SIM_CHUNK], dt)[:, :, cfg.n_dof - 1]
    return out


def harmonic_pool(seed: int, pool: int, n_times: int, dt: float) -> np.ndarray:
    t = time_grid(n_times, dt)
    return np.stack([harmonic_excitation(sample_harmonic_coefficients(SeededRng(seed, l)), t)
                     for l in range(pool)])


def _scales(data: Dataset) -> dict:
    return {"input_scale": float(np.max(np.abs(data.inputs[data.train_idx]))),
            "target_scale": float(np.max(np.abs(data.targets[data.train_idx])))}


def _scaled(data: Dataset, scales: dict) -> Dataset:
    return Dataset(data.inputs / scales["input_scale"], data.targets / scales["target_scale"], data.dt,
                   data.train_idx, data.val_idx, data.provenance)


def _write_splits(art: ArtifactDir, data: Dataset, seed: int) -> None:
    ids = np.asarray(data.provenance["pool_indices"], dtype=np.int64)
    for split, idx in (("train", data.train_idx), ("val", data.val_idx)):
        art.npz(f"data/{split}.npz", {"sample_id": ids[idx], "seed": np.full(len(idx), seed, dtype=np.int64),
                                      "stream": ids[idx], "excitation": data.inputs[idx, :, 0],
                                      "response": data.targets[idx, :, 0]})


def _init_spec(seed: int, k: int, which: int) -> InitSpec:
    return InitSpec("uniform_fanin", INIT_SEED_OFFSET + 100 * seed + 10 * k + which)


def _train_config(cfg: dict, **changes) -> TrainConfig:
    fields = train_fields(cfg)
    fields.update(changes)
    return TrainConfig(**fields)


def _decay_outputs(art: ArtifactDir, report, x_name: str, reference_slope: float, title: str) -> None:
    art.json("errors.json", {"x_name": x_name, **report.to_dict()})
    pts = [{x_name: p["size"], "rel_linf": p["rel_linf"], "rel_l2": p["rel_l2"]} for p in report.points()]
    art.text("points.csv", rows_csv(pts, [x_name, "rel_linf", "rel_l2"]))
    fits = {"reference_slope": reference_slope,
            "linf": None if report.fit_linf is None else report.fit_linf.to_dict(),
            "l2": None if report.fit_l2 is None else report.fit_l2.to_dict()}
    art.json("decay_fit.json", fits)
    for key, fit in (("rel_linf", report.fit_linf), ("rel_l2", report.fit_l2)):
        xs = [p[x_name] for p in pts]
        ys = [p[key] for p in pts]
        svg = loglog_svg(xs, ys, f"{title}: {key}", x_name, key,
                         None if fit is None else (fit.slope, fit.intercept), reference_slope)
        art.text(f"decay_{key}.svg", svg)


# ------------------------------------------------------------ case 2
def run_case2(cfg: dict, art: ArtifactDir) -> dict:
    """Width sweep of Gamma on Bouc-Wen responses to harmonizable motion."""
    seed = cfg["seed"]
    d, m = cfg["data"], cfg["model"]
    bw = BoucWenConfig(**cfg.get("boucwen", {}))
    dt, n_times = d["dt"], d["n_times"]
    with art.timed("generate"):
        grid = make_spectrum_grid(time_grid(n_times, dt), d["f_max"], d["n_freq"])
        U = sample_harmonizable_batch(seed, range(d["pool_size"]), grid)
        Y = simulate_top_floor(bw, U, dt)
        data = build_case2_dataset(U, Y, d["stride"], dt, d.get("n_select"))
    scales = _scales(data)
    _write_splits(art, data, seed)
    art.json("data/scaling.json", scales)
    sdata = _scaled(data, scales)
    if d.get("eval_on", "pool") == "pool":
        U_eval, Y_eval = U[..., None] / scales["input_scale"], Y[..., None] / scales["target_scale"]
    else:
        U_eval, Y_eval = sdata.inputs[sdata.val_idx], sdata.targets[sdata.val_idx]
    r = m["r"]
    tc = _train_config(cfg)
    models, widths = [], list(m["gamma_widths"])
    for k, w in enumerate(widths):
        gamma = init_mlp([2 * r + 1, w, r], m.get("gamma_activation", "relu"), _init_spec(seed, k, 1))
        pi = init_mlp([r + 2] + list(m["pi_hidden"]) + [1], m.get("pi_activation", "relu"), _init_spec(seed, k, 2),
                      batchnorm=m.get("batchnorm", False))
        model = OscillatorModel(gamma, pi, r)
        with art.timed(f"train_width_{w}"):
            model, record = train(model, sdata, tc,
                                  on_epoch=lambda e, row, w=w: art.log(
                                      f"  width {w} epoch {e} loss {row['train_loss']:.4e} val_linf {row['val_linf']:.4e}")
                                  if e % 50 == 0 else None)
        art.text(f"train/width_{w}.csv", record.to_csv())
        art.json(f"checkpoints/width_{w}.json", model_to_dict(model))
        if record.halted:
            art.json(f"train/width_{w}_halted.json", {"halted": record.halted, "best_epoch": record.best_epoch})
        models.append(model)
    with art.timed("evaluate"):
        report = decay_experiment_report(models, widths, U_eval, Y_eval, dt, WIDTH_DECAY_RATE)
    _decay_outputs(art, report, "gamma_width", WIDTH_DECAY_RATE, "Case 2 error vs Gamma width")
    return {"spectral_mass_coverage": spectral_mass_coverage(grid), "scaling": scales,
            "fit_linf_slope": None if report.fit_linf is None else report.fit_linf.slope,
            "eval_samples": int(U_eval.shape[0])}


# ------------------------------------------------------------ case 1
def pi_clip_thresholds(counts: Sequence[int], base: float = 1.0) -> list[float]:
    """``base * sqrt(count_H / count_1)`` per depth."""
    return [base * math.sqrt(c / counts[0]) for c in counts]


def run_case1(cfg: dict, art: ArtifactDir) -> dict:
    """Depth sweep of Pi with warm-start identity deepening on the extreme
    value of the top-floor response to the harmonic excitation."""
    seed = cfg["seed"]
    d, m = cfg["data"], cfg["model"]
    bw = BoucWenConfig(**cfg.get("boucwen", {}))
    dt, n_times = d["dt"], d["n_times"]
    with art.timed("generate"):
        U = harmonic_pool(seed, d["pool_size"], n_times, dt)
        E = extreme_value_process(simulate_top_floor(bw, U, dt))
        data = build_case1_dataset(U, E, d["n_select"], dt)
    scales = _scales(data)
    _write_splits(art, data, seed)
    art.json("data/scaling.json", scales)
    sdata = _scaled(data, scales)
    if d.get("eval_on", "pool") == "pool":
        U_eval, Y_eval = U[..., None] / scales["input_scale"], E[..., None] / scales["target_scale"]
    else:
        U_eval, Y_eval = sdata.inputs[sdata.val_idx], sdata.targets[sdata.val_idx]
    r = m["r"]
    depths = list(m["pi_depths"])
    width = m["pi_hidden"][0]
    gamma = init_mlp([2 * r + 1, m["gamma_hidden"], r], m.get("gamma_activation", "relu"), _init_spec(seed, 0, 1))
    pi = init_mlp([r + 2, width, 1], m.get("pi_activation", "prelu"), _init_spec(seed, 0, 2),
                  batchnorm=m.get("batchnorm", True))
    model = OscillatorModel(gamma, pi, r)
    while model.pi.hidden_layers < depths[0]:
        model = OscillatorModel(model.gamma, deepen_identity(model.pi), r)
    counts = []
    models = []
    deepening = []
    base_pi = train_fields(cfg).get("clip_threshold_pi", 1.0)
    for k, depth in enumerate(depths):
        if k > 0:
            before = oscillator_predict(model, sdata.inputs, dt)
            while model.pi.hidden_layers < depth:
                model = OscillatorModel(model.gamma, deepen_identity(model.pi), r)
            gap = float(np.max(np.abs(oscillator_predict(model, sdata.inputs, dt) - before)))
            deepening.append({"from_depth": depths[k - 1], "to_depth": depth, "max_abs_output_change": gap})
        counts.append(count_params(model.pi))
        clip_pi = pi_clip_thresholds(counts, base_pi)[-1]
        tc = _train_config(cfg, clip_threshold_pi=clip_pi)
        with art.timed(f"train_depth_{depth}"):
            model, record = train(model, sdata, tc,
                                  on_epoch=lambda e, row, depth=depth: art.log(
                                      f"  depth {depth} epoch {e} loss {row['train_loss']:.4e} val_linf {row['val_linf']:.4e}")
                                  if e % 50 == 0 else None)
        art.text(f"train/depth_{depth}.csv", record.to_csv())
        art.json(f"checkpoints/depth_{depth}.json", model_to_dict(model))
        models.append(model)
    art.json("clip_thresholds.json", {"pi_param_counts": counts, "pi_thresholds": pi_clip_thresholds(counts, base_pi),
                                      "gamma_threshold": train_fields(cfg).get("clip_threshold_gamma", 1.0)})
    art.json("deepening.json", deepening)
    with art.timed("evaluate"):
        ref = depth_decay_rate(1, r)
        report = decay_experiment_report(models, depths, U_eval, Y_eval, dt, ref)
    _decay_outputs(art, report, "pi_hidden_layers", ref, "Case 1 error vs Pi depth")
    return {"scaling": scales, "fit_linf_slope": None if report.fit_linf is None else report.fit_linf.slope,
            "eval_samples": int(U_eval.shape[0]), "deepening": deepening}


# ------------------------------------------------------------ verification runs
def run_gradcheck(cfg: dict, art: ArtifactDir) -> dict:
    v = cfg.get("verify", {})
    res = gradcheck_suite(seed=cfg["seed"], **{k: v[k] for k in ("n_steps", "batch", "dt", "h", "tolerance") if k in v})
    art.text("gradcheck.csv", rows_csv(res.rows))
    art.json("report.json", {"passed": res.passed, "summary": res.summary})
    return {"passed": res.passed}


def run_encoder_check(cfg: dict, art: ArtifactDir) -> dict:
    v = cfg.get("verify", {})
    kw = {k: v[k] for k in ("omegas", "n_inputs", "T", "dt", "t_min", "tolerance") if k in v}
    res = encoder_equivalence_suite(seed=cfg["seed"], **kw)
    art.text("encoder_errors.csv", rows_csv(res.rows))
    art.json("report.json", {"passed": res.passed, "summary": res.summary})
    return {"passed": res.passed}


def run_perturbation(cfg: dict, art: ArtifactDir) -> dict:
    v = cfg.get("verify", {})
    kw = {k: v[k] for k in ("T", "dt") if k in v}
    if "n_pairs" in v:
        kw["n_pairs"] = v["n_pairs"]
    res = perturbation_suite(seed=cfg["seed"], **kw)
    art.text("perturbation.csv", rows_csv(res.rows))
    art.json("report.json", {"passed": res.passed, "summary": res.summary})
    return {"passed": res.passed}


def run_reconstruction_check(cfg: dict, art: ArtifactDir) -> dict:
    v = cfg.get("verify", {})
    T = v.get("T", 1.0)
    M_list = v.get("M_list", [16, 64, 256, 1024])
    kw = {k: v[k] for k in ("dt", "t_stride", "n_tau") if k in v}
    rep = lemma1_decay_report(default_lipschitz_family(T), M_list, T, **kw)
    contrast = lemma1_decay_report(short_scale_family(T, cfg["seed"]), M_list, T, **kw)
    slope_ok = rep.fit is not None and rep.fit.slope <= -0.28
    passed = rep.bound_holds and slope_ok
    art.json("report.json", {"passed": passed, "lipschitz_family": rep.to_dict(),
                             "short_scale_contrast": contrast.to_dict()})
    pts = [{"M": M, "sup_error": e, "bound": b, "v": vv}
           for M, e, b, vv in zip(rep.M_used, rep.errors, rep.bounds, rep.v)]
    art.text("points.csv", rows_csv(pts, ["M", "sup_error", "bound", "v"]))
    if pts:
        art.text("decay.svg", loglog_svg([p["M"] for p in pts], [p["sup_error"] for p in pts],
                                         "Sine reconstruction error vs modes", "M", "sup_error",
                                         None if rep.fit is None else (rep.fit.slope, rep.fit.intercept),
                                         RECONSTRUCTION_DECAY_RATE))
    return {"passed": passed, "skipped_M": rep.skipped}


RUNNERS = {"case1": run_case1, "case2": run_case2, "gradcheck": run_gradcheck,
           "lemma1_verify": run_reconstruction_check, "lemma2_verify": run_encoder_check,
           "perturbation_verify": run_perturbation}


def run_experiment(cfg: dict, out_dir=None, log: Optional[Callable[[str], None]] = None) -> Path:
    """Run one experiment and write its artifact directory.

    ``manifest.json`` and every CSV/JSON table are pure functions of the
    config; wall-clock durations go to ``timings.json`` only.  A failure
    still writes the manifest (status ``failed``) next to partial artifacts
    and re-raises.
    """
    out = Path(out_dir or cfg.get("output_dir") or f"runs/{cfg['experiment']}_{cfg.get('scale', 'desk')}")
    art = ArtifactDir(out, log)
    art.text("config.json", dumps(cfg))
    manifest = {"experiment": cfg["experiment"], "scale": cfg.get("scale", "desk"), "seed": cfg["seed"],
                "versions": versions(), "rng_algorithm": SeededRng(0).algorithm,
                "seed_streams": {"samples": "stream = pool index", "shuffle": "stream = 2**40 + epoch",
                                 "init": "seed offset per network"}}
    t0 = time.perf_counter()
    try:
        results = RUNNERS[cfg["experiment"]](cfg, art)
    except BaseException as exc:
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                        traceback=traceback.format_exc(), artifacts=sorted(art.files))
        art.json("manifest.json", manifest)
        art.timings["total"] = round(time.perf_counter() - t0, 3)
        (art.root / "timings.json").write_text(_json_text(art.timings))
        raise
    art.timings["total"] = round(time.perf_counter() - t0, 3)
    manifest.update(status="complete", results=results, artifacts=sorted(art.files + ["manifest.json"]))
    art.json("manifest.json", manifest)
    (art.root / "timings.json").write_text(_json_text(art.timings))
    return out
