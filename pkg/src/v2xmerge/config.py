"""Flat key=value configuration layered onto nested dataclass configs.

Config files are plain text: one ``dotted.key = value`` per line, ``#``
comments, blank lines ignored. The same dotted keys are accepted from
the command line, so a file plus ad-hoc overrides compose naturally.
Dotted paths follow the dataclass structure, e.g. ``channel.tx_power_dbm``.
"""

import collections.abc
import dataclasses
import math
import typing
from typing import Any, Dict, List, Mapping, Sequence


class ConfigError(ValueError):
    pass


def load_kv(path: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = stripped.split("=", 1)
            out[key.strip()] = raw.strip()
    return out


def parse_pairs(pairs: Sequence[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"override {p!r} is not key=value")
        key, raw = p.split("=", 1)
        out[key.strip()] = raw.strip()
    return out


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _coerce(raw: str, typ: Any, key: str) -> Any:
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if raw.lower() == "none":
            return None
        return _coerce(raw, args[0], key)
    is_seq = origin is not None and isinstance(origin, type) \
        and issubclass(origin, collections.abc.Sequence) and origin is not str
    if is_seq or typ in (tuple, list):
        elem = (typing.get_args(typ) or (float,))[0]
        if elem is Ellipsis:
            elem = float
        items = [s for s in raw.split(",") if s.strip()]
        vals = tuple(_coerce(s.strip(), elem, key) for s in items)
        return list(vals) if origin is list else vals
    if typ is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: {raw!r} is not a boolean")
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: {raw!r} is not an integer") from None
    if typ is float:
        try:
            if raw.lower() in ("inf", "+inf"):
                return math.inf
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: {raw!r} is not a number") from None
    if typ is str:
        return raw
    raise ConfigError(f"{key}: unsupported field type {typ!r}")


def _field_types(cfg: Any) -> Dict[str, Any]:
    return typing.get_type_hints(type(cfg))


def with_value(cfg: Any, dotted: str, raw: str) -> Any:
    """Return a copy of cfg with one dotted field replaced (coerced by type)."""
    parts = dotted.split(".")
    return _with_parts(cfg, parts, raw, dotted)


def _with_parts(cfg: Any, parts: List[str], raw: str, full: str) -> Any:
    if not dataclasses.is_dataclass(cfg):
        raise ConfigError(f"{full}: {'.'.join(parts)} does not address a config field")
    name = parts[0]
    hints = _field_types(cfg)
    if name not in {f.name for f in dataclasses.fields(cfg)}:
        raise ConfigError(f"{full}: unknown field {name!r} on {type(cfg).__name__}")
    if len(parts) == 1:
        value = getattr(cfg, name)
        if dataclasses.is_dataclass(value):
            raise ConfigError(f"{full}: {name!r} is a section, not a value")
        return dataclasses.replace(cfg, **{name: _coerce(raw, hints[name], full)})
    return dataclasses.replace(
        cfg, **{name: _with_parts(getattr(cfg, name), parts[1:], raw, full)})


def apply(cfg: Any, mapping: Mapping[str, str]) -> Any:
    """Apply overrides in sorted key order so the result is order-independent."""
    for key in sorted(mapping):
        cfg = with_value(cfg, key, mapping[key])
    return cfg


def flatten(cfg: Any, prefix: str = "") -> Dict[str, Any]:
    """Resolved configuration as a flat dotted-key mapping (for run summaries)."""
    out: Dict[str, Any] = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, prefix=f"{key}."))
        elif isinstance(value, tuple):
            out[key] = list(value)
        elif isinstance(value, float) and math.isinf(value):
            out[key] = "inf"
        else:
            out[key] = value
    return out
