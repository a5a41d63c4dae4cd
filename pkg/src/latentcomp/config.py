"""Flat ``key = value`` config files layered with presets and CLI overrides.

Grammar, one setting per line::

    # comment
    key = value        # trailing comments allowed

Keys are case-insensitive and ``-`` is read as ``_`` (``t-prime`` ==
``T_prime``).  Booleans accept true/false/yes/no/on/off/1/0.  Besides the
composition settings, the keys ``preset``, ``bg``, ``fg``, ``obj_mask``,
``user_box``, ``prompt`` and ``out`` are accepted.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .compose import PRESETS, CompositionConfig
from .errors import ConfigError

PATH_KEYS = ("bg", "fg", "obj_mask", "user_box", "prompt", "out", "weights")
_FIELD_TYPES = {f.name: f.type for f in fields(CompositionConfig)}
_ALIASES = {name.lower(): name for name in _FIELD_TYPES}
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def normalize_key(key: str) -> str:
    k = key.strip().lower().replace("-", "_")
    return _ALIASES.get(k, k)


def coerce(key: str, value):
    kind = _FIELD_TYPES[key]
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if kind == "bool":
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind}") from None
    return text


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        values[normalize_key(key)] = value.strip().strip('"')
    return values


def parse_config(path=None, overrides: dict | None = None) -> tuple[CompositionConfig, dict[str, str]]:
    """Defaults < preset < config file < ``overrides`` (CLI flags).

    Returns the validated config and the non-config path/text settings.
    """
    file_values = read_config_file(path) if path is not None else {}
    flag_values = {normalize_key(k): v for k, v in (overrides or {}).items() if v is not None}
    preset = flag_values.pop("preset", None) or file_values.pop("preset", None) or "cross-domain"
    file_values.pop("preset", None)
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")

    merged: dict = dict(PRESETS[preset])
    extras: dict[str, str] = {}
    for layer in (file_values, flag_values):
        for key, value in layer.items():
            if key in _FIELD_TYPES:
                merged[key] = coerce(key, value)
            elif key in PATH_KEYS:
                extras[key] = value
            else:
                raise ConfigError(key, "unknown setting")
    return CompositionConfig(**merged), extras
