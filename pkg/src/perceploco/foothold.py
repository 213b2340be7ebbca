"""Terrain-aware foothold placement reward.

Per foot, recent terrain samples are kept in a foot-frame point buffer.  At
liftoff the buffer is gated by the forward command, tiled into overlapping
windows, and every window that is planar, near-horizontal and not recessed
contributes its mean as a foothold candidate.  The candidates are latched
until touchdown, where the reward ``exp(-d / s_xz)`` scores the distance
from the realised contact to the nearest candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .eigen import eigh3
from .errors import EmptyWindowError, PhaseError, SpecificationError

_CONTAIN_EPS = 1e-9


@dataclass(frozen=True)
class FootholdConfig:
    window_x: float = 0.24
    window_y: float = 0.10
    stride: float = 0.04
    gate_time: float = 0.5
    roughness_max: float = 0.01
    normal_z_min: float = 0.95
    recess_min: float = -0.30
    tolerance: float = 0.05
    buffer_len: int = 512
    distance_plane: Literal["xz", "xy"] = "xz"

    def __post_init__(self) -> None:
        for name in ("window_x", "window_y", "stride", "gate_time", "roughness_max", "tolerance"):
            if not getattr(self, name) > 0:
                raise SpecificationError(f"{name} must be positive")
        if not 0.0 < self.normal_z_min < 1.0:
            raise SpecificationError("normal_z_min must lie in (0, 1)")
        if self.buffer_len < 1:
            raise SpecificationError("buffer_len must be >= 1")
        if self.distance_plane not in ("xz", "xy"):
            raise SpecificationError("distance_plane must be 'xz' or 'xy'")


@dataclass(frozen=True)
class WindowStats:
    mean: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, paired with ascending eigenvalues
    roughness: float
    count: int

    @property
    def normal(self) -> np.ndarray:
        return self.eigenvectors[:, 0]


def forward_gate(points: np.ndarray, forward_cmd: float, cfg: FootholdConfig) -> np.ndarray:
    """Drop points closer (in forward x) than the distance covered in ``gate_time``."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    threshold = cfg.gate_time * max(float(forward_cmd), 0.0)
    if threshold == 0.0:
        return points
    return points[points[:, 0] >= threshold]


def _tile_starts(lo: float, hi: float, size: float, stride: float) -> np.ndarray:
    count = max(int(math.floor((hi - lo - size) / stride + _CONTAIN_EPS)), 0) + 1
    return lo + stride * np.arange(count)


def window_index_sets(points: np.ndarray, cfg: FootholdConfig) -> list[tuple[tuple[float, float], np.ndarray]]:
    """Window footprints and the indices of the points inside each.

    Footprints are closed ``window_x x window_y`` rectangles anchored at the
    minimum x-y of the cloud and stepped by ``stride``; empty windows are
    omitted.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return []
    x, y = points[:, 0], points[:, 1]
    xs = _tile_starts(x.min(), x.max(), cfg.window_x, cfg.stride)
    ys = _tile_starts(y.min(), y.max(), cfg.window_y, cfg.stride)
    in_x = (x[None, :] >= xs[:, None] - _CONTAIN_EPS) & (x[None, :] <= xs[:, None] + cfg.window_x + _CONTAIN_EPS)
    in_y = (y[None, :] >= ys[:, None] - _CONTAIN_EPS) & (y[None, :] <= ys[:, None] + cfg.window_y + _CONTAIN_EPS)
    out = []
    for a, x0 in enumerate(xs):
        for b, y0 in enumerate(ys):
            idx = np.nonzero(in_x[a] & in_y[b])[0]
            if idx.size:
                out.append(((float(x0), float(y0)), idx))
    return out


def partition_windows(points: np.ndarray, cfg: FootholdConfig) -> list[np.ndarray]:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return [points[idx] for _, idx in window_index_sets(points, cfg)]


def _moments(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(points)
    mean = points.sum(axis=0) / n
    centered = points - mean
    cov = centered.T @ centered / max(n - 1, 1)
    return mean, 0.5 * (cov + cov.T)


def window_stats(points: np.ndarray) -> WindowStats:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyWindowError("window has no points")
    return window_stats_batch([points])[0]


def window_stats_batch(windows: list[np.ndarray]) -> list[WindowStats]:
    """Statistics of many windows with a single batched eigen-solve."""
    if not windows:
        return []
    if any(len(w) == 0 for w in windows):
        raise EmptyWindowError("window has no points")
    moments = [_moments(np.asarray(w, dtype=np.float64)) for w in windows]
    covs = np.stack([c for _, c in moments])
    vals, vecs = eigh3(covs)
    return [
        WindowStats(
            mean=mean,
            covariance=cov,
            eigenvalues=vals[k],
            eigenvectors=vecs[k],
            roughness=math.sqrt(max(vals[k, 0], 0.0)),
            count=len(windows[k]),
        )
        for k, (mean, cov) in enumerate(moments)
    ]


def accept_window(stats: WindowStats, cfg: FootholdConfig) -> bool:
    return bool(
        stats.roughness < cfg.roughness_max
        and abs(stats.normal[2]) > cfg.normal_z_min
        and stats.mean[2] > cfg.recess_min
    )


def extract_candidates(points: np.ndarray, forward_cmd: float, cfg: FootholdConfig) -> np.ndarray:
    """Means of accepted windows of the gated cloud, shape ``(k, 3)``."""
    gated = forward_gate(points, forward_cmd, cfg)
    windows = partition_windows(gated, cfg)
    stats = window_stats_batch(windows)
    accepted = [s.mean for s in stats if accept_window(s, cfg)]
    if not accepted:
        return np.zeros((0, 3))
    return np.stack(accepted)


def nearest_distance(candidates: np.ndarray, contact, plane: str = "xz") -> float:
    """Minimum planar distance from ``contact`` to the candidates (inf if none)."""
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    if len(candidates) == 0:
        return math.inf
    axes = [0, 2] if plane == "xz" else [0, 1]
    diff = candidates[:, axes] - np.asarray(contact, dtype=np.float64)[axes]
    return float(np.sqrt(np.min(np.sum(diff * diff, axis=1))))


def placement_reward(distance: float, cfg: FootholdConfig) -> float:
    if math.isinf(distance):
        return 0.0
    return math.exp(-distance / cfg.tolerance)


@dataclass
class FootholdState:
    """Buffer, latched candidates and contact phase of one foot.

    Feet start in stance.  ``liftoff_pose`` is the ``(x, y, z, yaw)`` foot pose
    at the last liftoff; candidates are expressed in that frame.
    """

    buffer_len: int = 512
    buffer: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    candidates: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    phase: Literal["stance", "swing"] = "stance"
    last_liftoff: float | None = None
    last_touchdown: float | None = None
    liftoff_pose: tuple[float, float, float, float] | None = None

    def push(self, points: np.ndarray) -> None:
        """Append foot-frame points, keeping only the most recent ``buffer_len``."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        merged = np.concatenate([self.buffer, points])
        self.buffer = merged[-self.buffer_len :] if len(merged) > self.buffer_len else merged

    def clear_buffer(self) -> None:
        self.buffer = np.zeros((0, 3))


def on_liftoff(
    state: FootholdState,
    forward_cmd: float,
    cfg: FootholdConfig,
    time: float | None = None,
    pose=None,
    points: np.ndarray | None = None,
) -> FootholdState:
    """Refresh the latched candidates from the buffer (or ``points``) and enter swing."""
    if state.phase != "stance":
        raise PhaseError("liftoff while already in swing")
    source = state.buffer if points is None else points
    cands = extract_candidates(source, forward_cmd, cfg)
    cands.setflags(write=False)
    state.candidates = cands
    state.phase = "swing"
    state.last_liftoff = time
    state.liftoff_pose = None if pose is None else tuple(float(v) for v in pose)
    return state


def touchdown_reward(state: FootholdState, contact_pos, cfg: FootholdConfig, time: float | None = None) -> float:
    """Score a touchdown against the latched candidates and enter stance.

    ``contact_pos`` must be in the same frame as the candidates (the foot
    frame at liftoff).  An empty candidate set scores 0.
    """
    if state.phase != "swing":
        raise PhaseError("touchdown while already in stance")
    d = nearest_distance(state.candidates, contact_pos, cfg.distance_plane)
    state.phase = "stance"
    state.last_touchdown = time
    return placement_reward(d, cfg)
