"""Flat ``key = value`` configuration covering model and training fields.

Precedence, lowest first: dataclass defaults, config file, ``PHGR_*``
environment variables, command-line flags.
"""
from __future__ import annotations

import os
from dataclasses import fields
from pathlib import Path

ENV_PREFIX = "PHGR_"


class ConfigError(ValueError):
    pass


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def parse_value(s: str):
    """Best-effort literal parsing: bool, none, int, float, comma list, else string."""
    s = s.strip()
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    if low == "none":
        return None
    if "," in s:
        return tuple(parse_value(p) for p in s.split(","))
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def coerce(key: str, value, default):
    """Convert ``value`` to the type of a field whose default is ``default``."""
    if isinstance(value, str):
        value = parse_value(value)
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if default is None or isinstance(default, tuple):
            if value is None:
                return None
            return tuple(float(x) for x in (value if isinstance(value, tuple) else (value,)))
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {key}") from None


def config_keys(*dataclasses) -> dict:
    """Map of key -> (owner class, default) across the given config dataclasses."""
    out = {}
    for cls in dataclasses:
        for f in fields(cls):
            out[f.name] = (cls, f.default)
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def env_overrides(keys) -> dict:
    return {k: os.environ[ENV_PREFIX + k.upper()] for k in keys if ENV_PREFIX + k.upper() in os.environ}


def build_configs(model_cls, train_cls, file_values=None, env=None, flags=None):
    """Merge the layers and instantiate ``(model_cfg, train_cfg)``; unknown keys are rejected."""
    keys = config_keys(model_cls, train_cls)
    merged = {}
    for layer in (file_values or {}, env or {}, flags or {}):
        for k, v in layer.items():
            if k not in keys:
                raise ConfigError(f"unknown config key {k!r}")
            merged[k] = coerce(k, v, keys[k][1])
    split = {model_cls: {}, train_cls: {}}
    for k, v in merged.items():
        split[keys[k][0]][k] = v
    try:
        return model_cls(**split[model_cls]), train_cls(**split[train_cls])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
