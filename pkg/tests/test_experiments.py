import json

import numpy as np

from neural_oscillator.config import apply_overrides, load_config
from neural_oscillator.experiments import pi_clip_thresholds, run_experiment


def tiny(name, extra):
    return apply_overrides(load_config(name), ["data.pool_size=24", "data.n_select=12", "data.n_times=60",
                                               "train.epochs=3", "train.batch_size=4", *extra])


def test_case1_tiny_run_deepens_and_writes_artifacts(tmp_path):
    out = run_experiment(tiny("case1_desk", ["model.pi_depths=[1, 3]"]), tmp_path / "c1")
    clips = json.loads((out / "clip_thresholds.json").read_text())
    assert clips["pi_param_counts"][0] == 92
    assert clips["pi_thresholds"] == pi_clip_thresholds(clips["pi_param_counts"])
    deep = json.loads((out / "deepening.json").read_text())
    assert deep[0]["from_depth"] == 1 and deep[0]["to_depth"] == 3
    assert deep[0]["max_abs_output_change"] <= 1e-12
    for depth in (1, 3):
        assert len((out / "train" / f"depth_{depth}.csv").read_text().splitlines()) == 4


def test_case2_tiny_run_is_repeatable(tmp_path):
    cfg = tiny("case2_desk", ["model.gamma_widths=[2, 3]", "data.stride=2", "data.n_freq=64"])
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    fit = json.loads((a / "decay_fit.json").read_text())
    assert fit["linf"]["x"] == [2, 3] and np.isfinite(fit["linf"]["slope"])
    names = [p.relative_to(a) for p in a.rglob("*") if p.suffix in (".csv", ".json") and p.name != "timings.json"]
    assert names
    assert all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
