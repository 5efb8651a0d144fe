"""Flat TOML configuration with one section per subcommand."""

from __future__ import annotations

import copy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULTS = {
    "synth": {
        "ticks": 5000,
        "attacks": 3,
        "duration": 50,
        "tanks": 1,
        "noise_sd": 0.5,
        "test_seed_offset": 1000,
    },
    "dtm": {"tau_gt": 0.1},
    "score": {
        "variant": "cb2",
        "lambda": 0.5,
        "s_window": 60,
        "context_len": 50,
        "diversity_mode": "neg_log",
        "hdm_mode": "mismatch",
        "vulnerability_mode": "inverse",
    },
    "curriculum": {
        "buckets": 10,
        "patience": 3,
        "delta": 1e-4,
        "max_epochs_per_stage": 50,
        # surfaced for completeness; its meaning is unresolved and nothing reads it
        "babystep_threshold": 0.8,
    },
    "train": {
        "batch_size": 64,
        "hidden_dim": 100,
        "window_size": 4,
        "learning_rate": 0.05,
        "max_epochs": 500,
        "optimizer": "sgd",
        "class_weight": "sqrt",
    },
    "detect": {"tau": 0.5},
    "eval": {"drift_window": 500, "drift_pairs": 200, "drift_seed": 0, "drift_mode": "sample"},
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    return merge(DEFAULTS, doc)
