"""Plain-text ``key = value`` configuration files.

One file describes one configuration object.  A ``kind = ...`` line names the
object (``plant``, ``mpc``, ``prbs``, ``fit``, ``collect`` or ``grid``); when it is
missing the caller's expected kind is used.  Unknown keys, repeated keys and
ill-typed values are errors that name the key and the line.  Omitted keys keep
their defaults.  Units are SI (temperatures in K, lengths in m, powers in W).
"""

from __future__ import annotations

import dataclasses
from dataclasses import fields, is_dataclass, replace
from pathlib import Path

from .excitation import CollectConfig, PrbsSchedule
from .experiments import SweepGrid
from .mpc import MpcConfig
from .narx import FitConfig
from .thermal_sim import ConfigError, PlantConfig

KINDS = {
    "plant": PlantConfig,
    "mpc": MpcConfig,
    "prbs": PrbsSchedule,
    "fit": FitConfig,
    "collect": CollectConfig,
    "grid": SweepGrid,
}


def _flat_fields(cls) -> dict[str, tuple[tuple[str, ...], object]]:
    """Map each leaf key to its attribute path and default value."""
    out: dict[str, tuple[tuple[str, ...], object]] = {}
    inst = cls()
    for f in fields(cls):
        val = getattr(inst, f.name)
        if is_dataclass(val):
            for key, (path, default) in _flat_fields(type(val)).items():
                if key in out:
                    raise RuntimeError(f"duplicate config key {key!r} in {cls.__name__}")
                out[key] = ((f.name,) + path, default)
        else:
            out[f.name] = ((f.name,), val)
    return out


def _parse_scalar(text: str, like):
    if isinstance(like, bool):
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, str):
        return text.strip("\"'")
    raise ValueError(f"unsupported value type {type(like).__name__}")


def _parse_value(text: str, default):
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        like = default[0] if default else 0.0
        return tuple(_parse_scalar(t, like) for t in items)
    return _parse_scalar(text, default)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def _build(cls, values: dict[tuple[str, ...], object]):
    """Instantiate ``cls`` from defaults overridden by ``values`` (keyed by path)."""
    obj = cls()
    nested: dict[str, dict] = {}
    top = {}
    for path, v in values.items():
        if len(path) == 1:
            top[path[0]] = v
        else:
            nested.setdefault(path[0], {})[path[1:]] = v
    for name, sub in nested.items():
        top[name] = _build(type(getattr(obj, name)), sub)
    return replace(obj, **top)


def parse_config_text(text: str, kind: str | None = None, source: str = "<config>"):
    """Parse configuration text; see the module docstring for the format."""
    entries: list[tuple[int, str, str]] = []
    file_kind = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key == "kind":
            file_kind = val
            continue
        entries.append((lineno, key, val))
    if file_kind is not None and kind is not None and file_kind != kind:
        raise ConfigError(f"{source}: expected a {kind!r} config, file declares {file_kind!r}")
    kind = file_kind or kind
    if kind not in KINDS:
        raise ConfigError(f"{source}: unknown or missing config kind {kind!r}; "
                          f"expected one of {sorted(KINDS)}")
    cls = KINDS[kind]
    spec = _flat_fields(cls)
    values: dict[tuple[str, ...], object] = {}
    seen: dict[str, int] = {}
    for lineno, key, val in entries:
        if key not in spec:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} for {kind} config")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: key {key!r} repeated (first on line {seen[key]})")
        seen[key] = lineno
        path, default = spec[key]
        try:
            values[path] = _parse_value(val, default)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: key {key!r}: {exc}") from None
    cfg = _build(cls, values)
    try:
        cfg.validate()
    except ValueError as exc:
        msg = str(exc)
        key = msg.split()[0] if msg.split() else ""
        where = f"{source}:{seen[key]}: " if key in seen else f"{source}: "
        raise ConfigError(where + msg) from None
    return cfg


def parse_config(path, kind: str | None = None):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), kind, str(path))


def config_kind(cfg) -> str:
    for name, cls in KINDS.items():
        if isinstance(cfg, cls):
            return name
    raise ConfigError(f"no config kind for {type(cfg).__name__}")


def serialize_config(cfg) -> str:
    """Text form listing every key; ``parse_config_text`` of it returns an equal object."""
    kind = config_kind(cfg)
    lines = [f"kind = {kind}"]
    for key, (path, _) in _flat_fields(type(cfg)).items():
        v = cfg
        for p in path:
            v = getattr(v, p)
        lines.append(f"{key} = {_format_value(v)}")
    return "\n".join(lines) + "\n"


def config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
