"""TOML-backed configuration files and KP parameter files."""

from __future__ import annotations

import copy
import sys
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .hysteresis import KpModel


class ConfigError(ValueError):
    """Configuration could not be parsed or failed validation."""


def parse_toml(text: str, source: str = "<string>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def read_toml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_toml(text, str(path))


def dump_toml(data: dict) -> str:
    return tomli_w.dumps(data)


def load_kp_params(path) -> KpModel:
    """Read a KP parameter file (``N`` plus ``[[operator]]`` tables)."""
    data = read_toml(path)
    try:
        return KpModel.from_dict(data)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def save_kp_params(model: KpModel, path, comment: str = "") -> Path:
    path = Path(path)
    header = "".join(f"# {line}\n" for line in comment.splitlines())
    path.write_text(header + dump_toml(model.to_dict()))
    return path


def merge_defaults(data: dict, defaults: dict, where: str = "") -> dict:
    """Fill ``data`` from ``defaults`` recursively, rejecting unknown keys and
    type mismatches.  Keys whose default is ``None`` accept any value."""
    out = copy.deepcopy(defaults)
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if key not in defaults:
            raise ConfigError(f"unknown field {path!r}")
        default = defaults[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"field {path!r} must be a table")
            out[key] = merge_defaults(value, default, path)
        elif default is None:
            out[key] = value
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"field {path!r} must be true or false, got {value!r}")
            out[key] = value
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"field {path!r} must be a number, got {value!r}")
            if isinstance(default, int) and not float(value).is_integer():
                raise ConfigError(f"field {path!r} must be an integer, got {value!r}")
            out[key] = float(value) if isinstance(default, float) else int(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"field {path!r} must be a string, got {value!r}")
            out[key] = value
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"field {path!r} must be an array, got {value!r}")
            out[key] = value
        else:
            out[key] = value
    return out
