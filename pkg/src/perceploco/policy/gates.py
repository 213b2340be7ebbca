"""Highway-gate statistics grouped by terrain, contact phase and posture."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError

RISKY_ANGLE = 0.20


@dataclass(frozen=True)
class GateRecord:
    terrain: str
    in_flight: bool
    roll: float
    pitch: float
    beta: np.ndarray

    @property
    def posture(self) -> str:
        return "risky" if abs(self.roll) > RISKY_ANGLE or abs(self.pitch) > RISKY_ANGLE else "stable"

    @property
    def contact(self) -> str:
        return "flight" if self.in_flight else "support"


def gate_statistics(records) -> dict[str, dict[str, float]]:
    """Channel-mean gate per timestep, averaged within each label group.

    Returns ``{"terrain": {...}, "contact": {...}, "posture": {...}}``; a group
    with no timesteps is left out rather than reported as zero.
    """
    sums: dict[str, dict[str, list[float]]] = {k: defaultdict(list) for k in ("terrain", "contact", "posture")}
    for r in records:
        m = float(np.mean(r.beta))
        sums["terrain"][r.terrain].append(m)
        sums["contact"][r.contact].append(m)
        sums["posture"][r.posture].append(m)
    return {axis: {label: math.fsum(v) / len(v) for label, v in sorted(groups.items())} for axis, groups in sums.items()}


def parse_records(lines) -> list[GateRecord]:
    """Records from JSON lines with keys terrain, in_flight, roll, pitch, beta."""
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            out.append(GateRecord(str(d["terrain"]), bool(d["in_flight"]), float(d["roll"]), float(d["pitch"]),
                                  np.asarray(d["beta"], dtype=np.float64)))
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"line {lineno}: bad gate record ({exc})") from exc
        if out[-1].beta.ndim != 1 or out[-1].beta.size == 0:
            raise FormatError(f"line {lineno}: beta must be a non-empty list")
    return out
