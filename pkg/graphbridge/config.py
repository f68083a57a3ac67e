#!/usr/bin/env python3
"""
Per-user configuration for GraphBridge
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    "hidden_dim": 100,
    "side_hidden": 16,
    "layers": 2,
    "seeds": [0, 1, 2, 3, 4],
    "patience": 20,
    "tune_lr": 0.01,
    "pretrain_lr": 1e-3,
    "weight_decay": 5e-4,
    "batch_size": 64,
    "temperature": 0.5,
    "perturb_eta": 1.0,
    "edge_ratio": 0.1,
    "knn_k": 8,
    "split": [0.6, 0.2, 0.2],
    "workers": 1,
}


def config_dir() -> Path:
    """~/.graphbridge unless GRAPHBRIDGE_HOME points elsewhere"""
    home = os.environ.get("GRAPHBRIDGE_HOME")
    return Path(home) if home else Path.home() / ".graphbridge"


def config_file() -> Path:
    return config_dir() / "config.json"


def load_config() -> Dict[str, Any]:
    """Load configuration from file, writing the defaults on first use"""
    path = config_file()
    if not path.exists():
        save_config(dict(DEFAULTS))
        return dict(DEFAULTS)
    try:
        with open(path, "r") as f:
            stored = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at byte {e.pos}: {e.msg}")
    if not isinstance(stored, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = sorted(set(stored) - set(DEFAULTS))
    if unknown:
        logger.warning("ignoring unknown config keys %s in %s", unknown, path)
    return {**DEFAULTS, **{k: v for k, v in stored.items() if k in DEFAULTS}}


def save_config(config: Dict[str, Any]):
    """Save configuration to file"""
    path = config_file()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)


def parse_value(key: str, raw: str) -> Any:
    """Coerce a `key=value` string to the type of the default"""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key '{key}', expected one of {sorted(DEFAULTS)}")
    default = DEFAULTS[key]
    try:
        if isinstance(default, list):
            value = json.loads(raw)
            if not isinstance(value, list):
                raise ValueError("expected a JSON list")
            return value
        if isinstance(default, int):
            return int(raw)
        return float(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse '{raw}' ({e})")


def set_value(key: str, raw: str) -> Dict[str, Any]:
    """Persist one value and return the updated configuration"""
    config = load_config()
    config[key] = parse_value(key, raw)
    save_config(config)
    return config


def effective(config: Dict[str, Any], **overrides: Optional[Any]) -> Dict[str, Any]:
    """Config values with non-None CLI overrides applied"""
    merged = dict(config)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged
