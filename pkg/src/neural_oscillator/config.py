"""Experiment configuration: JSON files, presets, dotted overrides, validation."""
from __future__ import annotations

import copy
import json
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional

from .dynsys import BoucWenConfig
from .training import TrainConfig

EXPERIMENTS = ("case1", "case2", "lemma1_verify", "lemma2_verify", "perturbation_verify", "gradcheck")
SCALES = ("paper", "desk")


class ConfigError(ValueError):
    pass


_DATA_KEYS = {"pool_size", "n_select", "stride", "n_times", "dt", "f_max", "n_freq", "eval_on"}
_MODEL_KEYS = {"r", "gamma_hidden", "gamma_widths", "pi_hidden", "pi_depths", "pi_activation",
               "gamma_activation", "batchnorm", "pi_clip_rule", "init"}
_VERIFY_KEYS = {"M_list", "T", "dt", "n_inputs", "omegas", "n_pairs", "delta", "tolerance",
                "band_hz", "n_tau", "t_stride", "t_min", "h", "n_steps", "batch"}

SECTIONS = {
    "data": _DATA_KEYS,
    "model": _MODEL_KEYS,
    "train": {f.name for f in fields(TrainConfig)},
    "boucwen": {f.name for f in fields(BoucWenConfig)},
    "verify": _VERIFY_KEYS,
}
TOP_KEYS = {"experiment", "scale", "seed", "output_dir", "description"} | set(SECTIONS)


def preset_names() -> list[str]:
    root = resources.files("neural_oscillator") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def load_config(path_or_name: str) -> dict:
    """Read a JSON config file, or a bundled preset by name."""
    p = Path(path_or_name)
    if p.is_file():
        text = p.read_text()
        source = str(p)
    else:
        name = path_or_name[:-5] if path_or_name.endswith(".json") else path_or_name
        res = resources.files("neural_oscillator") / "presets" / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"no config file or preset named {path_or_name!r} "
                              f"(presets: {', '.join(preset_names())})")
        text = res.read_text()
        source = f"preset:{name}"
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    validate(cfg, text, source)
    return cfg


def _key_line(text: Optional[str], key: str) -> str:
    if not text:
        return ""
    pos = text.find(f'"{key}"')
    return f"line {_line_of(text, pos)}: " if pos >= 0 else ""


def validate(cfg: dict, text: Optional[str] = None, source: str = "config") -> None:
    if not isinstance(cfg, dict):
        raise ConfigError(f"{source}: top level must be an object")
    for k in cfg:
        if k not in TOP_KEYS:
            raise ConfigError(f"{source}: {_key_line(text, k)}unknown key {k!r}")
    if cfg.get("experiment") not in EXPERIMENTS:
        raise ConfigError(f"{source}: {_key_line(text, 'experiment')}experiment must be one of {EXPERIMENTS}")
    if cfg.get("scale", "desk") not in SCALES:
        raise ConfigError(f"{source}: {_key_line(text, 'scale')}scale must be one of {SCALES}")
    if not isinstance(cfg.get("seed", 0), int):
        raise ConfigError(f"{source}: {_key_line(text, 'seed')}seed must be an integer")
    for sec, allowed in SECTIONS.items():
        body = cfg.get(sec, {})
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: {_key_line(text, sec)}section {sec!r} must be an object")
        for k in body:
            if k not in allowed:
                raise ConfigError(f"{source}: {_key_line(text, k)}unknown key {sec}.{k}")
    try:
        if "train" in cfg:
            TrainConfig(**train_fields(cfg))
        if "boucwen" in cfg:
            BoucWenConfig(**cfg["boucwen"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def train_fields(cfg: dict) -> dict:
    out = dict(cfg.get("train", {}))
    out.setdefault("seed", cfg.get("seed", 0))
    return out


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: dict, overrides: Iterable[str]) -> dict:
    """Apply ``section.key=value`` (or ``key=value`` for top-level keys);
    values parse as JSON when possible."""
    out = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) == 1:
            if parts[0] not in TOP_KEYS or parts[0] in SECTIONS:
                raise ConfigError(f"unknown top-level key {parts[0]!r}")
            out[parts[0]] = _parse_value(raw)
        elif len(parts) == 2:
            sec, k = parts
            if sec not in SECTIONS or k not in SECTIONS[sec]:
                raise ConfigError(f"unknown key {key!r}")
            out.setdefault(sec, {})[k] = _parse_value(raw)
        else:
            raise ConfigError(f"override key {key!r} nests too deeply")
    validate(out, None, "overrides")
    return out


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
