"""Run configuration: defaults, INI files and environment overrides."""

from __future__ import annotations

import configparser
import io
import os
import re
from dataclasses import dataclass, fields, replace
from typing import Mapping

from .impute import METHODS

ENV_PREFIX = "TRAJIMPUTE_"
SECTION = "trajimpute"

_UNITS = {"s": 1, "sec": 1, "m": 60, "min": 60, "h": 3600, "hr": 3600, "d": 86400}


def parse_duration(text) -> float:
    """Seconds from ``"360"``, ``"360s"``, ``"6min"``, ``"1.5h"`` or ``"1d"``."""
    if isinstance(text, (int, float)):
        return float(text)
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*([a-z]*)\s*", str(text).lower())
    if not m or m.group(2) not in ("", *_UNITS):
        raise ValueError(f"bad duration {text!r}")
    return float(m.group(1)) * _UNITS.get(m.group(2), 1)


def format_duration(seconds: float) -> str:
    for unit, size in (("h", 3600), ("min", 60)):
        if seconds >= size and seconds % size == 0:
            return f"{seconds / size:g}{unit}"
    return f"{seconds:g}s"


def _split(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    """Every setting a run depends on. Durations are seconds."""

    input: tuple[str, ...] = ()
    input_format: str = "csv"
    timezone: str = "UTC"
    interval: float = 900.0
    max_gap: float = 360.0
    min_span: float = 86400.0
    max_speed: float = 70.0
    stay_radius: float = 200.0
    stay_duration: float = 600.0
    tdtr_tolerance: float = 30.0
    travel_threshold: float = 0.1
    metric: str = "travel_distance_km"
    methods: tuple[str, ...] = METHODS
    gaps: tuple[float, ...] = (3600.0, 10800.0, 21600.0, 36000.0, 43200.0)
    strata: tuple[str, ...] = ("any",)
    n_affected: int = 100
    kappa_low: float = 1.0
    kappa_medium: float = 3.0
    kappa_high: float = 8.0
    dtwbmi_buffer: float = 28800.0
    dtwbmi_window: float | None = 43200.0
    dtwbmi_specificity: str = "high"
    dtwbmi_m: int = 3
    own_base_pool: int = 48
    own_repetitions: int = 10
    seed: int = 0
    jobs: int = 1
    out: str = "out"

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS and m != "dtwbmi":
                raise ValueError(f"unknown method {m!r}")
        if self.input_format not in ("csv", "jsonl"):
            raise ValueError(f"unknown input format {self.input_format!r}")
        if self.interval <= 0 or 86400 % self.interval:
            raise ValueError("interval must divide 24 h evenly")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def kappa_levels(self) -> tuple[tuple[str, float], ...]:
        return (("low", self.kappa_low), ("medium", self.kappa_medium), ("high", self.kappa_high))

    # -- serialization ------------------------------------------------------

    def to_strings(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in _DURATIONS:
                if isinstance(v, tuple):
                    out[f.name] = ",".join(format_duration(x) for x in v)
                else:
                    out[f.name] = "none" if v is None else format_duration(v)
            elif isinstance(v, tuple):
                out[f.name] = ",".join(str(x) for x in v)
            else:
                out[f.name] = str(v)
        return out

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp[SECTION] = self.to_strings()
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_strings(cls, values: Mapping[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        known = {f.name: f for f in fields(cls)}
        changes = {}
        for key, raw in values.items():
            name = key.strip().lower().replace("-", "_")
            if name not in known:
                raise ValueError(f"unknown config key {key!r}")
            changes[name] = _coerce(name, raw, getattr(base, name))
        return replace(base, **changes)

    @classmethod
    def from_ini(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if SECTION not in cp:
            raise ValueError(f"config file lacks a [{SECTION}] section")
        return cls.from_strings(dict(cp[SECTION]), base)

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None, base: "RunConfig | None" = None) -> "RunConfig":
        env = os.environ if environ is None else environ
        vals = {k[len(ENV_PREFIX) :].lower(): v for k, v in env.items() if k.startswith(ENV_PREFIX)}
        for k in ("pure_python", "no_ext"):  # build and backend switches
            vals.pop(k, None)
        return cls.from_strings(vals, base)


_DURATIONS = {
    "interval",
    "max_gap",
    "min_span",
    "stay_duration",
    "gaps",
    "dtwbmi_buffer",
    "dtwbmi_window",
}


def _coerce(name: str, raw, current):
    if not isinstance(raw, str):
        return raw
    if name in _DURATIONS:
        if name == "gaps":
            return tuple(parse_duration(x) for x in _split(raw))
        if name == "dtwbmi_window" and raw.strip().lower() in ("none", ""):
            return None
        return parse_duration(raw)
    if isinstance(current, tuple):
        return _split(raw)
    if isinstance(current, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw.strip()
