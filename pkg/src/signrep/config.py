"""Run configuration: a nested defaults tree, TOML/JSON files, overrides.

The tree mirrors every module's config keys. Files may be TOML or JSON
(by extension); unknown keys are rejected with their dotted path so a
typo cannot silently fall back to a default. CLI flags are applied last
and win. Train commands persist the fully resolved tree as JSON beside
their checkpoint, and that snapshot reloads through the same entry
point to reproduce the run.
"""

from __future__ import annotations

import copy
import json

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from .errors import ConfigError
from .mae import MAE_DEFAULTS
from .tasks.s2t import S2T_DEFAULTS
from .tasks.slr import SLR_DEFAULTS
from .tasks.t2s import T2S_DEFAULTS


def _strip(d, drop):
    return {k: v for k, v in d.items() if k not in drop}


def default_tree():
    """Fresh copy of the full defaults tree."""
    mae = _strip(MAE_DEFAULTS, {"apw_mode", "apw_fixed", "apw_clamp_floor",
                                "edges"})
    tree = {
        "seed": 0,
        "corpus": {
            "vocab_size": 20,
            "proto_len": 15,
            "sentence_min": 2,
            "sentence_max": 6,
            "jitter": 0.01,
            "n_sentences": 50,
            "fps": 25,
            "train_ratio": 0.8,
            "valid_ratio": 0.1,
            "test_ratio": 0.1,
        },
        "pose": {
            "filter_threshold": 0.5,
        },
        "apw": {
            "mode": MAE_DEFAULTS["apw_mode"],
            "fixed": list(MAE_DEFAULTS["apw_fixed"]),
            "clamp_floor": MAE_DEFAULTS["apw_clamp_floor"],
        },
        "signmae": mae,
        "s2t": _strip(S2T_DEFAULTS, {"vocab"}),
        "t2s": _strip(T2S_DEFAULTS, {"vocab"}),
        # slr encoder dims always mirror the pretraining encoder
        "slr": _strip(SLR_DEFAULTS, {"classes", "d", "n_heads", "d_ff",
                                     "enc_layers", "repr_dim"}),
        "eval": {
            "beam": 5,
        },
    }
    return copy.deepcopy(tree)


def _merge(base, user, prefix=""):
    for key, val in user.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path} expects a table")
            _merge(base[key], val, prefix=path + ".")
        else:
            base[key] = val
    return base


def load_config(path=None, overrides=None):
    """Resolved tree from a TOML/JSON file plus dotted-key overrides."""
    tree = default_tree()
    if path is not None:
        text_mode = str(path).endswith((".json",))
        if text_mode:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        else:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        _merge(tree, user)
    for dotted, value in (overrides or []):
        node = tree
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key: {dotted}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node[parts[-1]] = value
    return tree


def mae_config(tree):
    """signmae table plus the apw table flattened to model config keys."""
    cfg = dict(tree["signmae"])
    cfg["apw_mode"] = tree["apw"]["mode"]
    cfg["apw_fixed"] = list(tree["apw"]["fixed"])
    cfg["apw_clamp_floor"] = tree["apw"]["clamp_floor"]
    return cfg


def save_snapshot(tree, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree, fh, indent=2, sort_keys=True)
        fh.write("\n")
