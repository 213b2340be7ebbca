"""INI configuration mirroring the module parameters.

Every key is optional; defaults come from the module dataclasses.  Unknown
sections or keys are rejected, and :meth:`Config.dumps` writes a canonical
form that loads back to an equal config.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import fields
from pathlib import Path

from .errors import FormatError
from .foothold import FootholdConfig
from .harness import GaitScript
from .policy.network import PolicyDims
from .render import DEFAULT_D_MAX, DEFAULT_HEIGHT, DEFAULT_PITCH_DOWN, DEFAULT_VFOV, DEFAULT_WIDTH, FootSector
from .rewards import WEIGHTS, RewardParams
from .terrain import TerrainSpec

ENV_VAR = "PERCEPLOCO_CONFIG"


def _dataclass_defaults(cls, skip=()) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        out[f.name] = getattr(cls(), f.name)
    return out


SCHEMA: dict[str, dict] = {
    "terrain": _dataclass_defaults(TerrainSpec),
    "camera": {
        "width": DEFAULT_WIDTH,
        "height": DEFAULT_HEIGHT,
        "vertical_fov_deg": round(math.degrees(DEFAULT_VFOV), 12),
        "pitch_down_deg": round(math.degrees(DEFAULT_PITCH_DOWN), 12),
        "d_max": DEFAULT_D_MAX,
        "offset_x": 0.10,
        "offset_y": 0.0,
        "offset_z": 0.25,
    },
    "sector": {"x_min": 0.0, "x_max": 1.2, "y_min": -0.08, "y_max": 0.08, "spacing": 0.04},
    "foothold": _dataclass_defaults(FootholdConfig),
    "rewards": _dataclass_defaults(RewardParams, skip=("weights",)),
    "weights": dict(WEIGHTS),
    "policy": dict(_dataclass_defaults(PolicyDims), precision="float64"),
    "gait": _dataclass_defaults(GaitScript),
    "rollout": {"duration": 5.0, "body_mass": 39.0, "contact_mode": "geometric"},
}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(raw: str, default, where: str):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [p.strip() for p in text.split(",") if p.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in items)
        if default is None:
            return None if text.lower() == "none" else int(text)
        return text
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from exc


class Config:
    """Section -> key -> typed value, with defaults filled in."""

    def __init__(self, values: dict[str, dict] | None = None):
        self.values = {sec: dict(keys) for sec, keys in SCHEMA.items()}
        for sec, keys in (values or {}).items():
            self._check(sec, keys)
            self.values[sec].update(keys)

    @staticmethod
    def _check(section: str, keys) -> None:
        if section not in SCHEMA:
            raise FormatError(f"unknown config section [{section}]")
        unknown = set(keys) - set(SCHEMA[section])
        if unknown:
            raise FormatError(f"unknown keys in [{section}]: {sorted(unknown)}")

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, Config) and self.values == other.values

    @classmethod
    def loads(cls, text: str) -> "Config":
        parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
        parser.optionxform = str  # keep key case
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise FormatError(f"malformed config: {exc}") from exc
        values: dict[str, dict] = {}
        for sec in parser.sections():
            cls._check(sec, parser[sec].keys())
            values[sec] = {
                key: _parse(raw, SCHEMA[sec][key], f"[{sec}] {key}") for key, raw in parser[sec].items()
            }
        return cls(values)

    @classmethod
    def load(cls, path) -> "Config":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text)

    @classmethod
    def resolve(cls, path=None) -> "Config":
        """Config from ``path``, else from ``$PERCEPLOCO_CONFIG``, else defaults."""
        path = path or os.environ.get(ENV_VAR)
        return cls.load(path) if path else cls()

    def dumps(self) -> str:
        lines = []
        for sec, keys in self.values.items():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {_format(v)}" for k, v in keys.items())
            lines.append("")
        return "\n".join(lines)

    def override(self, section: str, **updates) -> None:
        """Apply explicit values (e.g. CLI flags); ``None`` leaves the config value."""
        given = {k: v for k, v in updates.items() if v is not None}
        self._check(section, given)
        self.values[section].update(given)

    # typed views

    def terrain_spec(self) -> TerrainSpec:
        return TerrainSpec(**self["terrain"])

    def foothold(self) -> FootholdConfig:
        return FootholdConfig(**self["foothold"])

    def sector(self) -> FootSector:
        s = self["sector"]
        return FootSector((s["x_min"], s["x_max"]), (s["y_min"], s["y_max"]), s["spacing"])

    def reward_params(self) -> RewardParams:
        return RewardParams(**self["rewards"], weights=dict(self["weights"]))

    def policy_dims(self) -> PolicyDims:
        return PolicyDims(**{k: v for k, v in self["policy"].items() if k != "precision"})

    def gait(self) -> GaitScript:
        return GaitScript(**self["gait"])
