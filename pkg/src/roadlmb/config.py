"""Run configuration: shipped defaults, dotted overrides, FilterConfig construction.

The defaults under ``filter`` reproduce the published tracker settings:
survival 0.99, extraction 0.2, pruning 0.01, process noise 5 m/s^2 and
0.1 rad/s^2, radar detection probability 0.85 with clutter 1e-5, and IDM
T = 1.6 s, a = 0.73 m/s^2, b = 1.67 m/s^2 (s0 = 2 m is the textbook value).
"""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .idm import IdmParams
from .lmb import BirthModel, FilterConfig
from .motion import PredictionSettings, ProcessNoise

CONFIG_ENV = "ROADLMB_CONFIG"


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "scenario": {"name": "s-curve", "params": {}},
    "variants": ["baseline", "interacting"],
    "monte_carlo": {"replicates": 1, "seed": 0, "workers": 1},
    "output": "track-output",
    "write_scans": True,
    "filter": {
        "survival_prob": 0.99,
        "extraction_threshold": 0.2,
        "prune_threshold": 0.01,
        "gate_threshold": 13.8,
        "hypothesis_cap": 100,
        "process_noise": {"q_v": 5.0, "q_omega": 0.1},
        "prediction": {
            "kappa": 2.0,
            "v_min": 0.5,
            "s_min": 0.5,
            "omega_max": 1.0,
            "max_decel": 9.81,
            "leader_existence": 0.5,
            "max_lookahead": 3,
            "gap_cutoff": 100.0,
            "corridor_half_width": 1.75,
            "merge_distance": 0.1,
            "max_components": 12,
            "prune_weight": 1e-4,
        },
        "birth": {
            "mode": "measurement-driven",
            "existence": 0.05,
            "speed_mean": 8.0,
            "speed_std": 4.0,
            "heading_components": 8,
            "turn_rate_std": 0.2,
            "min_existence": 0.01,
        },
    },
    "idm": {"s0": 2.0, "T": 1.6, "a": 0.73, "b": 1.67},
    "metrics": {"match_gate": 5.0, "ospa_cutoff": 10.0, "ospa_order": 1.0},
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_value(text: str):
    """JSON scalar/list if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, dotted: str, value) -> dict:
    """Set ``config[a][b][c] = value`` for ``dotted == "a.b.c"``, creating levels as needed."""
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigError(f"malformed override key {dotted!r}")
    node = config
    for k in keys[:-1]:
        nxt = node.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {dotted!r} descends into non-object {k!r}")
        node = nxt
    node[keys[-1]] = value
    return config


def parse_overrides(args: list[str]) -> dict[str, object]:
    """``--a.b=1`` or ``--a.b 1`` pairs from leftover command-line arguments."""
    out: dict[str, object] = {}
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--") or len(arg) == 2:
            raise ConfigError(f"unexpected argument {arg!r}")
        body = arg[2:]
        if "=" in body:
            key, raw = body.split("=", 1)
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"override {arg!r} needs a value")
            key, raw = body, args[i + 1]
            i += 1
        if "." not in key:
            raise ConfigError(f"unknown option {arg!r} (overrides use dotted keys such as --filter.survival_prob=0.95)")
        out[key] = parse_value(raw)
        i += 1
    return out


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file (explicit path or $ROADLMB_CONFIG), then overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must contain a JSON object")
        cfg = deep_merge(cfg, doc)
    for k, v in (overrides or {}).items():
        apply_override(cfg, k, v)
    return cfg


def _check_type(key: str, default, value) -> None:
    """Values must match the kind of the field default (bool, number, string)."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        return
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")


def _take(d: dict, cls, section: str, aliases: dict | None = None):
    fields = cls.__dataclass_fields__
    kw = {}
    for k, v in d.items():
        name = (aliases or {}).get(k, k)
        if name not in fields:
            raise ConfigError(f"unknown key {section}.{k}")
        _check_type(f"{section}.{k}", fields[name].default, v)
        kw[name] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def filter_config_from_dict(d: dict) -> FilterConfig:
    d = dict(d)
    noise = _take(d.pop("process_noise", {}), ProcessNoise, "filter.process_noise")
    pred = _take(d.pop("prediction", {}), PredictionSettings, "filter.prediction")
    birth = _take(d.pop("birth", {}), BirthModel, "filter.birth")
    d.update(noise=noise, prediction=pred, birth=birth)
    return _take(d, FilterConfig, "filter")


def idm_from_dict(d: dict) -> IdmParams:
    unknown = set(d) - {"s0", "T", "a", "b"}
    if unknown:
        raise ConfigError(f"unknown key(s) idm.{sorted(unknown)}")
    for k, v in d.items():
        _check_type(f"idm.{k}", 1.0, v)
    try:
        return IdmParams.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"idm: {exc}") from exc
