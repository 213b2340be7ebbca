"""Procedural heightfield terrains and elevation queries.

Elevation samples live at cell centers ``x_i = origin_x + i * resolution`` and
``y_j = origin_y + j * resolution``; the surface between four neighbouring
centers is the bilinear patch through them.  Generated fields put the x
centers on odd multiples of half a cell so that risers, gap edges and
platform walls fall exactly midway between two centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import FormatError, RangeError, SpecificationError

Family = Literal["flat", "stairs_up", "stairs_down", "gap", "platform"]
FAMILIES = ("flat", "stairs_up", "stairs_down", "gap", "platform")

DEFAULT_RESOLUTION = 0.02
APRON = 1.0
GAP_DEPTH = 1.0

_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class TerrainSpec:
    family: str = "flat"
    rise: float = 0.15
    tread: float = 0.30
    gap_width: float = 0.50
    platform_height: float = 0.30
    extent: float = 8.0
    seed: int = 0
    width: float = 4.0
    resolution: float = DEFAULT_RESOLUTION

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise SpecificationError(f"unknown terrain family {self.family!r}")
        for name in ("extent", "width", "resolution"):
            if not getattr(self, name) > 0:
                raise SpecificationError(f"{name} must be positive")
        required = {
            "stairs_up": ("rise", "tread"),
            "stairs_down": ("rise", "tread"),
            "gap": ("gap_width",),
            "platform": ("platform_height",),
        }.get(self.family, ())
        for name in required:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise SpecificationError(f"{self.family} requires {name} > 0, got {value}")
        if self.family != "flat" and self.extent <= 2 * APRON:
            raise SpecificationError(f"extent must exceed the two {APRON} m aprons")
        if self.family.startswith("stairs") and self.n_steps < 1:
            raise SpecificationError("extent too short for a single stair tread")

    @property
    def feature_start(self) -> float:
        """World x where the terrain feature (first tread, gap, plateau) begins."""
        return APRON

    @property
    def n_steps(self) -> int:
        return int(math.floor((self.extent - 2 * APRON) / self.tread + _EDGE_EPS))

    def as_meta(self) -> dict[str, str]:
        return {
            "family": self.family,
            "rise": repr(float(self.rise)),
            "tread": repr(float(self.tread)),
            "gap_width": repr(float(self.gap_width)),
            "platform_height": repr(float(self.platform_height)),
            "extent": repr(float(self.extent)),
            "seed": str(int(self.seed)),
            "width": repr(float(self.width)),
            "resolution": repr(float(self.resolution)),
        }

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "TerrainSpec":
        kwargs: dict = {}
        for f in cls.__dataclass_fields__.values():
            if f.name not in meta:
                continue
            raw = meta[f.name]
            kwargs[f.name] = raw if f.name == "family" else (int(raw) if f.name == "seed" else float(raw))
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class Heightfield:
    """Immutable regular-grid elevation map.

    ``elevation[i, j]`` is the height of the center at
    ``(origin[0] + i * resolution, origin[1] + j * resolution)``; axis 0 runs
    along world x (forward), axis 1 along world y.
    """

    resolution: float
    elevation: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        elev = np.array(self.elevation, dtype=np.float64, order="C")
        if elev.ndim != 2 or min(elev.shape) < 2:
            raise SpecificationError("elevation must be a 2-D grid of at least 2x2 cells")
        if not np.all(np.isfinite(elev)):
            raise SpecificationError("elevation values must be finite")
        if not self.resolution > 0:
            raise SpecificationError("resolution must be positive")
        elev.setflags(write=False)
        object.__setattr__(self, "elevation", elev)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def nx(self) -> int:
        return self.elevation.shape[0]

    @property
    def ny(self) -> int:
        return self.elevation.shape[1]

    # the naming used by the file header
    width_cells = nx
    length_cells = ny

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) of the interpolable region."""
        ox, oy = self.origin
        return (ox, ox + (self.nx - 1) * self.resolution, oy, oy + (self.ny - 1) * self.resolution)

    @property
    def spec(self) -> TerrainSpec | None:
        return TerrainSpec.from_meta(self.meta) if "family" in self.meta else None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Heightfield):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and self.elevation.shape == other.elevation.shape
            and bool(np.array_equal(self.elevation, other.elevation))
            and self.meta == other.meta
        )

    __hash__ = None  # type: ignore[assignment]


def _profile(spec: TerrainSpec, x: np.ndarray) -> np.ndarray:
    """Elevation as a function of world x for the 1-D terrain families."""
    s0 = spec.feature_start
    if spec.family == "flat":
        return np.zeros_like(x)
    if spec.family in ("stairs_up", "stairs_down"):
        k = np.floor((x - s0) / spec.tread + _EDGE_EPS)
        k = np.clip(k, 0, spec.n_steps)
        sign = 1.0 if spec.family == "stairs_up" else -1.0
        return sign * spec.rise * k
    if spec.family == "gap":
        inside = (x >= s0) & (x < s0 + spec.gap_width)
        return np.where(inside, -GAP_DEPTH, 0.0)
    # platform
    inside = (x >= s0) & (x < spec.extent - APRON)
    return np.where(inside, spec.platform_height, 0.0)


def generate(spec: TerrainSpec) -> Heightfield:
    """Build the heightfield for ``spec``; deterministic in the spec alone."""
    spec.validate()
    res = spec.resolution
    nx = int(round(spec.extent / res)) + 1
    ny = int(round(spec.width / res)) + 1
    ox = -0.5 * res
    oy = -0.5 * (ny - 1) * res
    xs = ox + np.arange(nx) * res
    column = _profile(spec, xs)
    elevation = np.repeat(column[:, None], ny, axis=1)
    return Heightfield(resolution=res, elevation=elevation, origin=(ox, oy), meta=spec.as_meta())


def _check_bounds(hf: Heightfield, x: np.ndarray, y: np.ndarray) -> None:
    x_min, x_max, y_min, y_max = hf.bounds
    tol = 1e-9 * max(1.0, hf.resolution)
    if (
        np.any(x < x_min - tol)
        or np.any(x > x_max + tol)
        or np.any(y < y_min - tol)
        or np.any(y > y_max + tol)
        or np.any(~np.isfinite(x))
        or np.any(~np.isfinite(y))
    ):
        raise RangeError(
            f"query outside heightfield bounds x[{x_min:.4f}, {x_max:.4f}] y[{y_min:.4f}, {y_max:.4f}]"
        )


def sample_height(hf: Heightfield, x, y):
    """Bilinear elevation at world ``(x, y)``; accepts scalars or arrays."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    _check_bounds(hf, xa, ya)
    fx = (xa - hf.origin[0]) / hf.resolution
    fy = (ya - hf.origin[1]) / hf.resolution
    i = np.clip(np.floor(fx), 0, hf.nx - 2).astype(np.intp)
    j = np.clip(np.floor(fy), 0, hf.ny - 2).astype(np.intp)
    u = np.clip(fx - i, 0.0, 1.0)
    v = np.clip(fy - j, 0.0, 1.0)
    e = hf.elevation
    z = (
        (1.0 - u) * (1.0 - v) * e[i, j]
        + u * (1.0 - v) * e[i + 1, j]
        + (1.0 - u) * v * e[i, j + 1]
        + u * v * e[i + 1, j + 1]
    )
    if z.ndim == 0:
        return float(z)
    return z


def height_scan(
    hf: Heightfield,
    base_pose: tuple[float, float, float],
    rows: int,
    cols: int,
    spacing: float,
    base_height: float = 0.0,
) -> np.ndarray:
    """Yaw-aligned elevation grid around the base, relative to ``base_height``.

    ``base_pose`` is ``(x, y, yaw)``.  Row index runs along the body forward
    axis, column index along body left; the grid is centered on the base.
    """
    if rows < 1 or cols < 1 or not spacing > 0:
        raise SpecificationError("scan grid needs rows, cols >= 1 and spacing > 0")
    bx, by, yaw = base_pose
    fwd = (np.arange(rows) - 0.5 * (rows - 1)) * spacing
    left = (np.arange(cols) - 0.5 * (cols - 1)) * spacing
    fx, ly = np.meshgrid(fwd, left, indexing="ij")
    c, s = math.cos(yaw), math.sin(yaw)
    wx = bx + c * fx - s * ly
    wy = by + s * fx + c * ly
    return sample_height(hf, wx, wy) - base_height


_MAGIC = "heightfield 1"


def save_heightfield(hf: Heightfield, path: str | Path) -> None:
    """Write ``hf`` as a plain-text header followed by row-major floats.

    Floats are written with ``repr`` so loading reproduces them bit-exactly.
    """
    lines = [
        _MAGIC,
        f"resolution {hf.resolution!r}",
        f"dims {hf.nx} {hf.ny}",
        f"origin {hf.origin[0]!r} {hf.origin[1]!r}",
    ]
    if hf.meta:
        lines.append("meta " + " ".join(f"{k}={v}" for k, v in sorted(hf.meta.items())))
    lines.append("data")
    for row in hf.elevation.tolist():
        lines.append(" ".join(repr(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_heightfield(path: str | Path) -> Heightfield:
    try:
        text = Path(path).read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read heightfield {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise FormatError(f"{path}: missing '{_MAGIC}' header")
    header: dict[str, list[str]] = {}
    idx = 1
    while idx < len(lines) and lines[idx].strip() != "data":
        key, _, rest = lines[idx].partition(" ")
        header[key] = rest.split()
        idx += 1
    if idx == len(lines):
        raise FormatError(f"{path}: missing data section")
    try:
        resolution = float(header["resolution"][0])
        nx, ny = (int(v) for v in header["dims"])
        origin = (float(header["origin"][0]), float(header["origin"][1]))
        meta = dict(item.split("=", 1) for item in header.get("meta", []))
        rows = [[float(v) for v in line.split()] for line in lines[idx + 1 :] if line.strip()]
    except (KeyError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed header or data ({exc})") from exc
    if len(rows) != nx or any(len(r) != ny for r in rows):
        raise FormatError(f"{path}: data does not match dims {nx}x{ny}")
    try:
        return Heightfield(resolution=resolution, elevation=np.array(rows), origin=origin, meta=meta)
    except SpecificationError as exc:
        raise FormatError(f"{path}: {exc}") from exc
