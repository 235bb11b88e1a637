"""Run configuration: JSON file + ``key=value`` overrides on top of built-in defaults."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .data import GeneratorSpec
from .errors import ConfigError
from .losses import LossSelection
from .trainer import Delta, TrainConfig

DEFAULTS = {
    "seed": 42,
    "out": "runs/default",
    "data": {
        "path": None,
        "generator": GeneratorSpec().to_dict(),
        "per_class_counts": None,
    },
    "encoder": {
        "mode": "weighted_subvideo",
        "embed_dim": 64,
        "dropout_prob": 0.5,
        "segment_len": 20,
        "per_segment": 2,
        "max_steps": None,
        "train": {"learning_rate": 3e-3, "momentum": 0.9, "weight_decay": 1e-4, "epochs": 300},
    },
    "teacher": {
        "hidden_dim": 64,
        "train": {
            "learning_rate": 3e-3,
            "momentum": 0.9,
            "weight_decay": 1e-3,
            "epochs": 150,
            "patience": 25,
            "checkpoint_every": 0,
            "loss": {"classification": "linear_weighted"},
        },
    },
    "student": {
        "train": {
            "learning_rate": 3e-3,
            "momentum": 0.9,
            "weight_decay": 1e-3,
            "epochs": 100,
            "patience": 25,
            "checkpoint_every": 0,
            "loss": {"classification": "linear_weighted", "future": "smooth_l1", "lam": 10.0},
            "delta": {"kind": "fraction", "value": 0.2},
        },
    },
    "evaluate": {"model": "student", "checkpoints": None, "split": "test"},
    "ablate": {
        "deltas": [{"kind": "fraction", "value": 0.2}, {"kind": "fraction", "value": 0.5}, {"kind": "fixed", "value": 10}],
        "lambdas": [10.0, 100.0],
        "future_losses": ["smooth_l1", "l2"],
        "truncations": [],
    },
    "gradcheck": {"instances": 20, "tolerance": 1e-4},
}

# subtrees whose keys are free-form
_OPEN = {("data", "generator", "class_durations")}


def _check_keys(user: dict, ref: dict, path=()):
    for key, val in user.items():
        here = path + (key,)
        if key not in ref:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(ref[key], dict) and here not in _OPEN:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {'.'.join(here)!r} must be an object")
            _check_keys(val, ref[key], here)


def _merge(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    dotted, raw = item.split("=", 1)
    keys = dotted.strip().split(".")
    node, ref = cfg, DEFAULTS
    for i, key in enumerate(keys):
        if not isinstance(ref, dict) or key not in ref:
            raise ConfigError(f"unknown config key {'.'.join(keys[: i + 1])!r}")
        if i == len(keys) - 1:
            node[key] = _parse_value(raw)
        else:
            node = node.setdefault(key, {})
            ref = ref[key]


def load_config(path=None, overrides=(), seed=None, out=None) -> dict:
    """Effective run config: defaults <- file <- overrides <- --seed/--out."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON at line {exc.lineno} ({exc.msg})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        _check_keys(user, DEFAULTS)
    cfg = _merge(DEFAULTS, user)
    for item in overrides or ():
        apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = str(out)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _section(cfg, *keys):
    node = cfg
    for k in keys:
        node = node[k]
    return node


def generator_spec(cfg) -> GeneratorSpec:
    g = dict(cfg["data"]["generator"])
    g["seed"] = cfg["seed"]
    try:
        return GeneratorSpec.from_dict(g)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"data.generator: {exc}") from None


def train_config(cfg, *keys) -> TrainConfig:
    """TrainConfig from ``cfg[keys...]['train']``; the run seed propagates."""
    section = dict(_section(cfg, *keys)["train"])
    path = ".".join(keys) + ".train"
    try:
        if "loss" in section:
            section["loss"] = LossSelection(**section["loss"])
        if section.get("delta") is not None:
            section["delta"] = Delta(**section["delta"])
        return TrainConfig(seed=cfg["seed"], **section)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
