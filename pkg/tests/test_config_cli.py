import csv
import json

import pytest

from neural_oscillator.cli import main
from neural_oscillator.config import (ConfigError, apply_overrides, dumps, load_config, preset_names,
                                      train_fields, validate)
from neural_oscillator.plots import loglog_svg, plot_table


def test_all_presets_load_and_validate():
    names = preset_names()
    assert {"case1_desk", "case1_paper", "case2_desk", "case2_paper", "gradcheck",
            "lemma1_verify", "lemma2_verify", "perturbation_verify"} <= set(names)
    for name in names:
        validate(load_config(name))


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "experiment": "case2",\n  "seed": 1,\n  "train": {"epochs": 2,\n    "learning_rate": 0.1}\n}\n')
    with pytest.raises(ConfigError, match=r"line 5.*train\.learning_rate"):
        load_config(str(p))


def test_syntax_error_reports_line(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "experiment": "case2",\n  "seed": 1,,\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(str(p))


def test_invalid_train_value_rejected(tmp_path):
    p = tmp_path / "neg.json"
    p.write_text(json.dumps({"experiment": "case2", "train": {"lr_drop_factor": 2.0}}))
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_overrides():
    cfg = load_config("case2_desk")
    out = apply_overrides(cfg, ["train.epochs=3", "seed=9", "model.gamma_widths=[2, 4]", 'output_dir="x"'])
    assert out["train"]["epochs"] == 3 and out["seed"] == 9 and out["model"]["gamma_widths"] == [2, 4]
    assert out["output_dir"] == "x"
    assert cfg["train"]["epochs"] != 3  # input untouched
    assert train_fields(out)["seed"] == 9
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["train.bogus=1"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["noequals"])


def test_resolved_config_round_trip(tmp_path):
    cfg = apply_overrides(load_config("case1_desk"), ["train.epochs=7"])
    p = tmp_path / "echo.json"
    p.write_text(dumps(cfg))
    assert load_config(str(p)) == cfg


def test_single_point_plot_has_no_lines():
    svg = loglog_svg([3.0], [0.1], "t", "x", "y", fit=(-0.5, 0.0), reference_slope=-0.5)
    assert "<circle" in svg and "<line x1" not in svg.split("</text>")[-1]
    assert "fitted slope" not in svg and "reference slope" not in svg


def test_power_law_plot_overlays_fit_and_reference():
    rows = [{"w": w, "e": 2.0 * w**-0.5} for w in (2.0, 5.0, 10.0, 20.0)]
    svg = plot_table(rows, "w", "e", "decay", reference_slope=-0.5)
    assert "fitted slope -0.500" in svg and "reference slope -0.500" in svg
    assert svg.count("<circle") == 4
    assert svg == plot_table(rows, "w", "e", "decay", reference_slope=-0.5)


def test_plot_rejects_nonpositive_and_empty():
    with pytest.raises(ValueError):
        loglog_svg([1.0, 2.0], [0.1, 0.0], "t", "x", "y")
    with pytest.raises(ValueError):
        loglog_svg([], [], "t", "x", "y")


def test_cli_plot(tmp_path, capsys):
    table = tmp_path / "pts.csv"
    table.write_text("size,rel_linf\n2,0.5\n4,0.35\n8,0.25\n")
    out = tmp_path / "p.svg"
    assert main(["plot", str(table), str(out), "--reference-slope", "-0.5"]) == 0
    assert out.read_text().startswith("<svg")
    bad = tmp_path / "bad.csv"
    bad.write_text("size,rel_linf\n2,0.5\n4,-1\n")
    assert main(["plot", str(bad), str(tmp_path / "q.svg")]) == 2


def test_cli_presets_and_bad_config(capsys, tmp_path):
    assert main(["presets"]) == 0
    assert "case2_desk" in capsys.readouterr().out
    p = tmp_path / "bad.json"
    p.write_text('{"experiment": "gradcheck", "colour": 1}')
    assert main(["run", str(p), "--quiet"]) == 2
    assert "colour" in capsys.readouterr().err
    assert main(["verify", "nosuch"]) == 2


def test_cli_gradcheck_table(tmp_path, capsys):
    out = tmp_path / "gc"
    assert main(["verify", "gradcheck", "--out", str(out), "--quiet"]) == 0
    rows = list(csv.DictReader(open(out / "gradcheck.csv")))
    assert rows and all(r["passed"] == "true" for r in rows)
    assert {r["judged"] for r in rows} <= {"true", "false"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete" and manifest["results"]["passed"] is True
    assert json.loads((out / "config.json").read_text())["experiment"] == "gradcheck"
    assert "rel_error" in rows[0]


def test_cli_encoder_table(tmp_path, capsys):
    out = tmp_path / "l2"
    code = main(["verify", "encoder", "--out", str(out), "--quiet", "--override", "verify.n_inputs=3"])
    assert code == 0
    rows = list(csv.DictReader(open(out / "encoder_errors.csv")))
    assert len({r["omega"] for r in rows}) == 4


def test_failed_run_leaves_failure_manifest(tmp_path, capsys):
    out = tmp_path / "fail"
    code = main(["run", "case2", "--out", str(out), "--quiet",
                 "--override", "data.pool_size=5", "--override", "data.n_select=50"])
    assert code == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["error"]
