"""Training reward terms evaluated on a single control-step snapshot.

All functions are pure.  History-dependent indicators (recent single-foot
contact, first-contact flags, air times) are computed upstream and carried in
the snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import SpecificationError

WEIGHTS: dict[str, float] = {
    "lin_vel_tracking": 2.5,
    "ang_vel_tracking": 1.5,
    "orientation": 1.0,
    "feet_contact": 1.5,
    "feet_y_distance": 0.1,
    "foothold_placement": 2.0,
    "base_height": 0.8,
    "lin_vel_z": -1.0,
    "ang_vel_xy": -0.05,
    "joint_velocity": -1e-3,
    "action_rate": -0.01,
    "action_smoothness": -0.01,
    "feet_air_time": -2.5,
    "foot_slip": -0.2,
    "foot_impact_acc": -0.5,
    "foot_impact_vel": -1.5,
    "dof_pos_limits": -10.0,
    "dof_vel_limits": -0.6,
    "hip_pos": -7.0,
    "ankle_pos": -10.0,
    "stumble": -10.0,
}
TERMS = tuple(WEIGHTS)

# 12-DoF leg ordering per side: hip pitch, hip roll, hip yaw, knee, ankle pitch, ankle roll
DEFAULT_HIP_XZ = (1, 2, 7, 8)
DEFAULT_ANKLE_X = (5, 11)


@dataclass(frozen=True)
class RewardParams:
    sigma_v: float = 0.25
    sigma_w: float = 0.25
    v_s: float = 0.1
    u_s: float = 0.1
    a0: float = 50.0
    v0: float = 0.6
    base_height_target: float = 0.55
    feet_y_target: float = 0.27
    support_force: float = 1.0
    slip_force: float = 5.0
    stumble_ratio: float = 5.0
    hip_indices: tuple[int, ...] = DEFAULT_HIP_XZ
    ankle_indices: tuple[int, ...] = DEFAULT_ANKLE_X
    weights: dict[str, float] = field(default_factory=lambda: dict(WEIGHTS))

    def __post_init__(self) -> None:
        if not (self.sigma_v > 0 and self.sigma_w > 0):
            raise SpecificationError("tracking sigmas must be positive")
        unknown = set(self.weights) - set(WEIGHTS)
        if unknown:
            raise SpecificationError(f"unknown reward terms: {sorted(unknown)}")


_VECTOR_FIELDS = {
    "base_ang_vel", "base_lin_vel", "projected_gravity", "command",
    "q", "qd", "q0", "action", "action_prev", "action_prev2",
    "q_min", "q_max", "qd_max",
    "foot_forces", "foot_vel", "foot_height", "air_time", "first_contact", "foot_acc_z",
}


@dataclass
class RobotSnapshot:
    """Proprioception, command, contacts and foot kinematics at one control step.

    Per-foot arrays have the foot as their first axis; ``foot_forces`` and
    ``foot_vel`` are ``(n_feet, 3)``.
    """

    base_ang_vel: np.ndarray
    base_lin_vel: np.ndarray
    projected_gravity: np.ndarray
    command: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    q0: np.ndarray
    action: np.ndarray
    action_prev: np.ndarray
    action_prev2: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    qd_max: np.ndarray
    foot_forces: np.ndarray
    foot_vel: np.ndarray
    foot_height: np.ndarray
    air_time: np.ndarray
    first_contact: np.ndarray
    foot_acc_z: np.ndarray
    base_height: float
    feet_y_distance: float
    single_contact_recent: bool = False

    def __post_init__(self) -> None:
        for name in _VECTOR_FIELDS:
            dtype = bool if name == "first_contact" else np.float64
            setattr(self, name, np.asarray(getattr(self, name), dtype=dtype))
        if abs(np.linalg.norm(self.projected_gravity) - 1.0) > 1e-6:
            raise SpecificationError("projected gravity must be a unit vector")
        n = len(self.q)
        for name in ("qd", "q0", "action", "action_prev", "action_prev2", "q_min", "q_max", "qd_max"):
            if getattr(self, name).shape != (n,):
                raise SpecificationError(f"{name} must have the joint count {n}")
        n_feet = len(self.foot_height)
        for name in ("foot_forces", "foot_vel"):
            if getattr(self, name).shape != (n_feet, 3):
                raise SpecificationError(f"{name} must be ({n_feet}, 3)")
        for name in ("air_time", "first_contact", "foot_acc_z"):
            if getattr(self, name).shape != (n_feet,):
                raise SpecificationError(f"{name} must have one entry per foot")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RobotSnapshot":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise SpecificationError(f"unknown snapshot fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RewardBreakdown:
    terms: dict[str, tuple[float, float, float]]

    @property
    def total(self) -> float:
        return sum(weighted for _, _, weighted in self.terms.values())

    def raw(self, name: str) -> float:
        return self.terms[name][0]

    def weighted(self, name: str) -> float:
        return self.terms[name][2]


# ---------------------------------------------------------------------------
# positive (task) terms


def track_lin_vel(s: RobotSnapshot, sigma_v: float = 0.25, v_s: float = 0.1) -> float:
    cmd_xy = s.command[:2]
    err = cmd_xy - s.base_lin_vel[:2]
    low_speed = float(np.linalg.norm(cmd_xy)) < v_s
    if low_speed:
        e = float(np.sum(np.abs(err)))
    else:
        e = float(err @ err)
    return math.exp(-e / sigma_v)


def track_ang_vel(s: RobotSnapshot, sigma_w: float = 0.25) -> float:
    return math.exp(-((s.base_ang_vel[2] - s.command[2]) ** 2) / sigma_w)


def orientation(s: RobotSnapshot) -> float:
    return math.exp(-10.0 * float(np.linalg.norm(s.projected_gravity[:2])))


def feet_contact(s: RobotSnapshot, u_s: float = 0.1) -> float:
    standing = float(np.linalg.norm(s.command)) < u_s
    return 1.0 if standing else float(bool(s.single_contact_recent))


def feet_y_distance(s: RobotSnapshot, target: float = 0.27) -> float:
    return math.exp(-10.0 * abs(s.feet_y_distance - target))


def support_height(s: RobotSnapshot, support_force: float = 1.0) -> float | None:
    """Mean height of feet carrying more than ``support_force`` normal load."""
    supporting = s.foot_forces[:, 2] > support_force
    if not np.any(supporting):
        return None
    return float(np.sum(s.foot_height[supporting]) / np.count_nonzero(supporting))


def base_height(s: RobotSnapshot, target: float = 0.55, support_force: float = 1.0) -> float:
    """Height tracking relative to the supporting feet; 0 when no foot supports."""
    z_supp = support_height(s, support_force)
    if z_supp is None:
        return 0.0
    return math.exp(-10.0 * abs((s.base_height - z_supp) - target))


# ---------------------------------------------------------------------------
# penalties (raw values are non-negative; weights carry the sign)


def _pos(x):
    return np.maximum(x, 0.0)


def penalties(s: RobotSnapshot, params: RewardParams | None = None) -> dict[str, float]:
    p = params or RewardParams()
    hip = np.asarray(p.hip_indices, dtype=int)
    ank = np.asarray(p.ankle_indices, dtype=int)
    dq = s.q - s.q0
    force_norm = np.linalg.norm(s.foot_forces, axis=1)
    tangential = np.linalg.norm(s.foot_forces[:, :2], axis=1)
    return {
        "lin_vel_z": float(s.base_lin_vel[2] ** 2),
        "ang_vel_xy": float(s.base_ang_vel[:2] @ s.base_ang_vel[:2]),
        "joint_velocity": float(s.qd @ s.qd),
        "action_rate": float(np.sum((s.action - s.action_prev) ** 2)),
        "action_smoothness": float(np.sum((s.action - 2.0 * s.action_prev + s.action_prev2) ** 2)),
        "feet_air_time": float(np.sum(np.where(s.first_contact, 0.5 - s.air_time, 0.0))),
        "foot_slip": float(np.sum(np.where(force_norm > p.slip_force, np.linalg.norm(s.foot_vel, axis=1), 0.0))),
        "foot_impact_acc": float(np.sum(_pos(np.abs(s.foot_acc_z) - p.a0))),
        "foot_impact_vel": float(np.sum(_pos(np.abs(s.foot_vel[:, 2]) - p.v0))),
        "dof_pos_limits": float(np.sum(_pos(s.q_min - s.q) + _pos(s.q - s.q_max))),
        "dof_vel_limits": float(np.sum(_pos(np.abs(s.qd) - s.qd_max))),
        "hip_pos": float(np.sum(dq[hip] ** 2)) if hip.size else 0.0,
        "ankle_pos": float(np.sum(dq[ank] ** 2)) if ank.size else 0.0,
        "stumble": float(np.any(tangential > p.stumble_ratio * np.abs(s.foot_forces[:, 2]))),
    }


def raw_terms(s: RobotSnapshot, foothold_r: float, params: RewardParams | None = None) -> dict[str, float]:
    p = params or RewardParams()
    raws = {
        "lin_vel_tracking": track_lin_vel(s, p.sigma_v, p.v_s),
        "ang_vel_tracking": track_ang_vel(s, p.sigma_w),
        "orientation": orientation(s),
        "feet_contact": feet_contact(s, p.u_s),
        "feet_y_distance": feet_y_distance(s, p.feet_y_target),
        "foothold_placement": float(foothold_r),
        "base_height": base_height(s, p.base_height_target, p.support_force),
    }
    raws.update(penalties(s, p))
    return {name: raws[name] for name in TERMS}


def weighted_breakdown(raws: dict[str, float], weights: dict[str, float] | None = None) -> RewardBreakdown:
    w = dict(WEIGHTS)
    w.update(weights or {})
    return RewardBreakdown({name: (float(r), w[name], w[name] * float(r)) for name, r in raws.items()})


def evaluate_all(s: RobotSnapshot, foothold_r: float = 0.0, params: RewardParams | None = None) -> RewardBreakdown:
    """Every reward term with its weight; ``foothold_r`` comes from the foothold module."""
    p = params or RewardParams()
    return weighted_breakdown(raw_terms(s, foothold_r, p), p.weights)
