"""Scripted kinematic biped rollouts over generated terrain.

A gait script alternates two feet along a straight heading.  Feet start
staggered by one step length, so every step moves a foot by two step lengths
and successive touchdowns advance by one step length.  Swing paths are
cycloids in the heading/vertical plane that leave and land on the terrain.

Contact is geometric (foot clearance within ``CONTACT_TOL``), forces are
synthesized from a body weight shared by the stance feet, and depth-derived
quantities refresh at 20 Hz against the 50 Hz control clock with
sample-and-hold.  Nothing here integrates dynamics.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, SpecificationError, StatisticError
from .foothold import FootholdConfig, FootholdState, nearest_distance, on_liftoff, touchdown_reward
from .policy.gates import GateRecord
from .policy.network import PolicyState, assemble_proprio, forward
from .render import CameraModel, FootSector, foot_pointcloud, render_depth, rotation_rpy, world_to_foot
from .rewards import RewardParams, RobotSnapshot, evaluate_all
from .terrain import Heightfield, TerrainSpec, sample_height

CONTROL_HZ = 50
DEPTH_HZ = 20
CONTROL_DT = 1.0 / CONTROL_HZ
CONTACT_TOL = 1e-4
BODY_MASS = 39.0
GRAVITY = 9.81
NOMINAL_BASE_HEIGHT = 0.55
SINGLE_CONTACT_WINDOW = 0.2
N_FEET = 2


@dataclass(frozen=True)
class GaitScript:
    """Straight-line alternating gait.

    ``initial_pose`` is ``(x, y, yaw)``: the trailing foot (foot 0) starts at
    ``(x, y + spacing/2)`` and the leading foot one step length ahead on the
    other side.  ``duty_factor`` is the stance share of each foot's cycle of
    two steps; below 0.5 both feet are airborne part of the time.
    """

    forward_cmd: float = 0.6
    step_length: float = 0.30
    step_height: float = 0.15
    step_duration: float = 0.5
    duty_factor: float = 0.6
    initial_pose: tuple[float, float, float] = (0.55, 0.0, 0.0)
    feet_spacing: float = 0.27
    settle_time: float = 0.2
    touchdown_offset: float = 0.0
    pitch_amplitude: float = 0.0
    max_steps: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "initial_pose", tuple(float(v) for v in self.initial_pose))
        if not self.step_duration > 0:
            raise SpecificationError("step_duration must be positive")
        if not 0.0 < self.duty_factor < 1.0:
            raise SpecificationError("duty_factor must lie in (0, 1)")
        if self.step_length < 0 or self.step_height < 0 or self.settle_time < 0:
            raise SpecificationError("step_length, step_height and settle_time must be non-negative")
        if self.max_steps is not None and self.max_steps < 0:
            raise SpecificationError("max_steps must be non-negative")
        swing = self.swing_ticks
        if not 1 <= swing < 2 * self.step_ticks:
            raise SpecificationError("step_duration/duty_factor leave no swing or no stance at 50 Hz")

    @property
    def step_ticks(self) -> int:
        return max(int(round(self.step_duration * CONTROL_HZ)), 1)

    @property
    def swing_ticks(self) -> int:
        return int(round(2 * self.step_ticks * (1.0 - self.duty_factor)))

    @property
    def settle_ticks(self) -> int:
        return int(round(self.settle_time * CONTROL_HZ))

    @property
    def stepping(self) -> bool:
        return self.forward_cmd != 0.0 and self.step_length > 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial_pose"] = list(self.initial_pose)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GaitScript":
        names = set(cls.__dataclass_fields__)
        unknown = set(data) - names
        if unknown:
            raise SpecificationError(f"unknown gait fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Swing:
    foot: int
    lift_tick: int
    land_tick: int
    start: np.ndarray  # world xyz on the terrain
    end: np.ndarray


def _cycloid(tau):
    return tau - np.sin(2.0 * np.pi * tau) / (2.0 * np.pi)


class GaitTrajectory:
    """Continuous-time foot and base trajectories of a script over a heightfield."""

    def __init__(self, script: GaitScript, hf: Heightfield, duration: float):
        if duration < 0:
            raise SpecificationError("duration must be non-negative")
        self.script = script
        self.hf = hf
        self.duration = float(duration)
        self.n_samples = int(round(duration * CONTROL_HZ))
        x0, y0, yaw = script.initial_pose
        self.yaw = yaw
        self._heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        self._left = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
        half = 0.5 * script.feet_spacing
        base0 = np.array([x0, y0, 0.0])
        along0 = (0.0, script.step_length)
        lateral = (half, -half)
        self._initial = np.stack([self._ground(base0 + a * self._heading + l * self._left)
                                  for a, l in zip(along0, lateral)])
        self.swings: list[Swing] = []
        if script.stepping:
            current = [self._initial[0].copy(), self._initial[1].copy()]
            n = 0
            while script.max_steps is None or n < script.max_steps:
                lift = script.settle_ticks + n * script.step_ticks
                if lift >= self.n_samples:
                    break
                foot = n % N_FEET
                target = (n + 2) * script.step_length + script.touchdown_offset
                end = self._ground(base0 + target * self._heading + lateral[foot] * self._left)
                self.swings.append(Swing(foot, lift, lift + script.swing_ticks, current[foot], end))
                current[foot] = end
                n += 1
        self._check_clearance()

    def _ground(self, p: np.ndarray) -> np.ndarray:
        return np.array([p[0], p[1], sample_height(self.hf, p[0], p[1])])

    def _check_clearance(self) -> None:
        # dense interior must stay above ground; control samples must read as airborne
        dense = np.linspace(0.0, 1.0, 401)[1:-1]
        for sw in self.swings:
            ticks = np.arange(1, sw.land_tick - sw.lift_tick) / (sw.land_tick - sw.lift_tick)
            for tau, floor in ((dense, 0.0), (ticks, CONTACT_TOL)):
                pts = self._swing_points(sw, tau)
                ground = sample_height(self.hf, pts[:, 0], pts[:, 1])
                if np.any(pts[:, 2] - ground <= floor):
                    raise SpecificationError(
                        f"swing of foot {sw.foot} at t={sw.lift_tick * CONTROL_DT:.2f}s touches the terrain; "
                        "raise step_height"
                    )

    def _swing_points(self, sw: Swing, tau: np.ndarray) -> np.ndarray:
        s = _cycloid(tau)
        xy = sw.start[None, :2] + s[:, None] * (sw.end[:2] - sw.start[:2])
        z = sw.start[2] + (sw.end[2] - sw.start[2]) * s + self.script.step_height * 0.5 * (1.0 - np.cos(2.0 * np.pi * tau))
        return np.column_stack([xy, z])

    def feet_at(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Foot positions ``(n, 2, 3)`` and ground references ``(n, 2)`` at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        pos = np.broadcast_to(self._initial, (len(t), N_FEET, 3)).copy()
        ref = pos[:, :, 2].copy()
        for sw in self.swings:
            t_lo, t_hi = sw.lift_tick * CONTROL_DT, sw.land_tick * CONTROL_DT
            after = t >= t_hi
            pos[after, sw.foot] = sw.end
            ref[after, sw.foot] = sw.end[2]
            during = (t > t_lo) & (t < t_hi)
            if np.any(during):
                tau = (t[during] - t_lo) / (t_hi - t_lo)
                pos[during, sw.foot] = self._swing_points(sw, tau)
                ref[during, sw.foot] = sw.start[2] + (sw.end[2] - sw.start[2]) * _cycloid(tau)
        return pos, ref

    def clearance_at(self, t) -> np.ndarray:
        pos, _ = self.feet_at(t)
        ground = sample_height(self.hf, pos[..., 0], pos[..., 1])
        return pos[..., 2] - ground

    def sample(self) -> "SampledGait":
        times = np.arange(self.n_samples) * CONTROL_DT
        feet, ref = self.feet_at(times)
        base = np.empty((self.n_samples, 3))
        mid = feet[:, :, :2].mean(axis=1)
        base[:, :2] = mid
        base[:, 2] = ref.mean(axis=1) + NOMINAL_BASE_HEIGHT
        pitch = self.script.pitch_amplitude * np.sin(np.pi * times / self.script.step_duration)
        rpy = np.column_stack([np.zeros_like(times), pitch, np.full_like(times, self.yaw)])
        return SampledGait(times=times, feet=feet, base=base, rpy=rpy, swings=list(self.swings))


@dataclass
class SampledGait:
    times: np.ndarray
    feet: np.ndarray  # (n, 2, 3)
    base: np.ndarray  # (n, 3)
    rpy: np.ndarray  # (n, 3)
    swings: list[Swing] = field(default_factory=list)


def synthesize_gait(script: GaitScript, hf: Heightfield, duration: float) -> SampledGait:
    """Foot and base trajectories sampled at the control rate for ``duration`` seconds."""
    return GaitTrajectory(script, hf, duration).sample()


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class ContactEvent:
    index: int
    time: float
    foot: int
    kind: str  # "liftoff" | "touchdown"
    position: tuple[float, float, float]


def contact_flags(feet: np.ndarray, hf: Heightfield, tol: float = CONTACT_TOL) -> np.ndarray:
    feet = np.asarray(feet, dtype=np.float64)
    if feet.size == 0:
        return np.zeros(feet.shape[:2], dtype=bool)
    ground = sample_height(hf, feet[..., 0], feet[..., 1])
    return feet[..., 2] - ground <= tol


def _events_from_flags(times, feet, contact, require_descent: bool) -> list[ContactEvent]:
    events = []
    n, nf = contact.shape
    for f in range(nf):
        touching = bool(contact[0, f]) if n else True
        for i in range(1, n):
            if touching and not contact[i, f]:
                kind = "liftoff"
            elif not touching and contact[i, f] and (not require_descent or feet[i, f, 2] < feet[i - 1, f, 2]):
                kind = "touchdown"
            else:
                continue
            touching = kind == "touchdown"
            events.append(ContactEvent(i, float(times[i]), f, kind, tuple(float(v) for v in feet[i, f])))
    events.sort(key=lambda e: (e.index, e.foot))
    return events


def detect_events(times, feet, hf: Heightfield, tol: float = CONTACT_TOL) -> list[ContactEvent]:
    """Liftoff/touchdown events from sampled foot positions.

    A touchdown is the first sample with clearance at most ``tol`` reached
    while descending; a liftoff is the first sample with clearance above
    ``tol``.  Events alternate per foot and feet start in contact.
    """
    feet = np.asarray(feet, dtype=np.float64)
    return _events_from_flags(np.asarray(times), feet, contact_flags(feet, hf, tol), True)


def detect_events_from_forces(times, feet, normal_forces, threshold: float = 1.0) -> list[ContactEvent]:
    """Force-threshold variant: contact while the normal force exceeds ``threshold``."""
    contact = np.asarray(normal_forces) > threshold
    return _events_from_flags(np.asarray(times), np.asarray(feet, dtype=np.float64), contact, False)


# ---------------------------------------------------------------------------
# foothold pipeline over a trajectory


def is_depth_tick(index: int) -> bool:
    """Whether a new depth frame arrives at control step ``index``."""
    if index == 0:
        return True
    return (index * DEPTH_HZ) // CONTROL_HZ != ((index - 1) * DEPTH_HZ) // CONTROL_HZ


class FootholdTracker:
    """Per-foot buffers, liftoff latching and touchdown scoring along a trajectory.

    On depth frames each stance foot pushes its sector samples, once per
    distinct stance pose (a static foot sees the same terrain, and duplicate
    copies would skew window means).  Touchdown clears the buffer because the
    foot frame moves.
    """

    def __init__(self, hf: Heightfield, cfg: FootholdConfig, sector: FootSector | None = None,
                 yaw: float = 0.0, n_feet: int = N_FEET):
        self.hf = hf
        self.cfg = cfg
        self.sector = sector or FootSector()
        self.yaw = yaw
        self.states = [FootholdState(buffer_len=cfg.buffer_len) for _ in range(n_feet)]
        self._pushed: list[tuple | None] = [None] * n_feet
        self._prev_feet: np.ndarray | None = None

    def step(self, index: int, time: float, feet: np.ndarray, contact, events, forward_cmd: float) -> list[dict]:
        records = []
        for ev in events:
            st = self.states[ev.foot]
            if ev.kind == "liftoff":
                stance = self._prev_feet[ev.foot] if self._prev_feet is not None else feet[ev.foot]
                pose = (float(stance[0]), float(stance[1]), float(stance[2]), self.yaw)
                on_liftoff(st, forward_cmd, self.cfg, time=time, pose=pose)
            else:
                local = world_to_foot(np.asarray(ev.position), st.liftoff_pose)
                d = nearest_distance(st.candidates, local, self.cfg.distance_plane)
                r = touchdown_reward(st, local, self.cfg, time=time)
                records.append({
                    "foot": ev.foot,
                    "step": index,
                    "t": time,
                    "contact_world": list(ev.position),
                    "contact_local": local.tolist(),
                    "liftoff_pose": list(st.liftoff_pose),
                    "distance": None if math.isinf(d) else d,
                    "reward": r,
                    "candidates": st.candidates.tolist(),
                })
                st.clear_buffer()
                self._pushed[ev.foot] = None
        if is_depth_tick(index):
            for f, st in enumerate(self.states):
                if not contact[f] or st.phase != "stance":
                    continue
                pose = (float(feet[f, 0]), float(feet[f, 1]), float(feet[f, 2]), self.yaw)
                if pose != self._pushed[f]:
                    st.push(foot_pointcloud(self.hf, pose, self.sector))
                    self._pushed[f] = pose
        self._prev_feet = np.array(feet, copy=True)
        return records


def foothold_over_trajectory(hf: Heightfield, times, feet, forward_cmds, cfg: FootholdConfig | None = None,
                             sector: FootSector | None = None, yaw: float = 0.0) -> list[dict]:
    """Touchdown records for a sampled trajectory (used by ``foothold-eval``)."""
    cfg = cfg or FootholdConfig()
    feet = np.asarray(feet, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = detect_events(times, feet, hf)
    contact = contact_flags(feet, hf)
    by_index: dict[int, list] = {}
    for ev in events:
        by_index.setdefault(ev.index, []).append(ev)
    tracker = FootholdTracker(hf, cfg, sector, yaw, feet.shape[1] if feet.ndim == 3 else N_FEET)
    out = []
    for i in range(len(times)):
        out.extend(tracker.step(i, float(times[i]), feet[i], contact[i], by_index.get(i, []), float(forward_cmds[i])))
    return out


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutConfig:
    foothold: FootholdConfig = field(default_factory=FootholdConfig)
    rewards: RewardParams = field(default_factory=RewardParams)
    sector: FootSector = field(default_factory=FootSector)
    camera: CameraModel = field(default_factory=CameraModel)
    camera_offset: tuple[float, float, float] = (0.10, 0.0, 0.25)
    body_mass: float = BODY_MASS
    contact_mode: str = "geometric"
    n_joints: int = 12
    joint_limit: float = 1.5
    joint_vel_limit: float = 20.0
    policy: object | None = None  # PolicyParams; drives actions and logs the highway gate

    def __post_init__(self) -> None:
        if self.contact_mode not in ("geometric", "force"):
            raise SpecificationError("contact_mode must be 'geometric' or 'force'")


class RolloutLog:
    """Header plus one record per control step; serialized as JSON lines."""

    def __init__(self, header: dict, steps: list[dict] | None = None):
        self.header = header
        self.steps = steps or []

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def touchdowns(self) -> list[dict]:
        return [td for s in self.steps for td in s["touchdowns"]]

    def events(self) -> list[dict]:
        return [dict(e, step=s["step"], t=s["t"]) for s in self.steps for e in s["events"]]

    def lines(self) -> list[str]:
        out = [json.dumps(dict(self.header, kind="header"), sort_keys=True)]
        out.extend(json.dumps(dict(s, kind="step"), sort_keys=True) for s in self.steps)
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")

    @classmethod
    def parse(cls, lines) -> "RolloutLog":
        header, steps = None, []
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from exc
            kind = rec.pop("kind", "step")
            if kind == "header":
                header = rec
            else:
                steps.append(rec)
        return cls(header or {}, steps)

    @classmethod
    def read(cls, path) -> "RolloutLog":
        return cls.parse(Path(path).read_text().splitlines())


def _projected_gravity(roll: float, pitch: float) -> np.ndarray:
    g = rotation_rpy(roll, pitch, 0.0).T @ np.array([0.0, 0.0, -1.0])
    return g / np.linalg.norm(g)


def run_rollout(script: GaitScript, hf: Heightfield, duration: float, cfg: RolloutConfig | None = None) -> RolloutLog:
    """Drive the gait, foothold pipeline, reward suite and (optionally) the policy for ``duration`` seconds."""
    cfg = cfg or RolloutConfig()
    gait = synthesize_gait(script, hf, duration)
    n = len(gait.times)
    nj = cfg.n_joints
    spec = hf.spec
    family = spec.family if spec is not None else "unknown"
    header = {
        "script": script.to_dict(),
        "terrain": dict(hf.meta),
        "control_hz": CONTROL_HZ,
        "depth_hz": DEPTH_HZ,
        "foothold": asdict(cfg.foothold),
        "contact_mode": cfg.contact_mode,
    }
    log = RolloutLog(header)
    if n == 0:
        return log

    geometric = contact_flags(gait.feet, hf)
    weight = cfg.body_mass * GRAVITY
    n_stance = geometric.sum(axis=1, keepdims=True)
    normal = np.where(geometric, weight / np.maximum(n_stance, 1), 0.0)
    if cfg.contact_mode == "force":
        events = detect_events_from_forces(gait.times, gait.feet, normal, cfg.rewards.support_force)
        contact = normal > cfg.rewards.support_force
    else:
        events = detect_events(gait.times, gait.feet, hf)
        contact = geometric
    by_index: dict[int, list] = {}
    for ev in events:
        by_index.setdefault(ev.index, []).append(ev)

    tracker = FootholdTracker(hf, cfg.foothold, cfg.sector, gait.rpy[0, 2])
    policy = cfg.policy
    if policy is not None:
        pstate = PolicyState.zeros(policy.dims)
        depth_norm = None

    q0 = np.zeros(nj)
    q_prev = q0.copy()
    qd_prev = np.zeros(nj)
    actions = [np.zeros(nj), np.zeros(nj)]  # a_{t-1}, a_{t-2}
    foot_vel_prev = np.zeros((N_FEET, 3))
    liftoff_time = [None] * N_FEET
    window = int(round(SINGLE_CONTACT_WINDOW * CONTROL_HZ))
    single = contact.sum(axis=1) == 1
    cmd = np.array([script.forward_cmd, 0.0, 0.0])

    for i in range(n):
        t = float(gait.times[i])
        feet = gait.feet[i]
        step_events = by_index.get(i, [])
        touchdowns = tracker.step(i, t, feet, contact[i], step_events, script.forward_cmd)
        first = np.zeros(N_FEET, bool)
        air = np.zeros(N_FEET)
        for ev in step_events:
            if ev.kind == "liftoff":
                liftoff_time[ev.foot] = t
            else:
                first[ev.foot] = True
        for f in range(N_FEET):
            if liftoff_time[f] is not None and (first[f] or not contact[i, f]):
                air[f] = t - liftoff_time[f]
        if i > 0:
            foot_vel = (feet - gait.feet[i - 1]) / CONTROL_DT
            base_vel_w = (gait.base[i] - gait.base[i - 1]) / CONTROL_DT
            pitch_rate = (gait.rpy[i, 1] - gait.rpy[i - 1, 1]) / CONTROL_DT
        else:
            foot_vel = np.zeros((N_FEET, 3))
            base_vel_w = np.zeros(3)
            pitch_rate = 0.0
        foot_acc_z = (foot_vel[:, 2] - foot_vel_prev[:, 2]) / CONTROL_DT if i > 1 else np.zeros(N_FEET)
        foot_vel_prev = foot_vel
        roll, pitch, yaw = gait.rpy[i]
        c, s = math.cos(yaw), math.sin(yaw)
        base_vel = np.array([c * base_vel_w[0] + s * base_vel_w[1], -s * base_vel_w[0] + c * base_vel_w[1], base_vel_w[2]])
        ang_vel = np.array([0.0, pitch_rate, 0.0])
        gravity = _projected_gravity(roll, pitch)

        action = np.zeros(nj)
        policy_rec = None
        if policy is not None:
            if is_depth_tick(i):
                mount = gait.base[i] + rotation_rpy(roll, pitch, yaw) @ np.asarray(cfg.camera_offset)
                cam = CameraModel(position=tuple(mount), rpy=(roll, pitch, yaw), pitch_down=cfg.camera.pitch_down,
                                  width=cfg.camera.width, height=cfg.camera.height,
                                  vertical_fov=cfg.camera.vertical_fov, d_max=cfg.camera.d_max)
                depth_norm = render_depth(cam, hf).normalized
            proprio = assemble_proprio(ang_vel, gravity, cmd, q_prev, q0, qd_prev, pstate.action_prev)
            out = forward(proprio, depth_norm, pstate, policy, q0)
            pstate = out.state
            action = out.action.astype(np.float64)
            policy_rec = {
                "action": action.tolist(),
                "beta": out.trace.beta.tolist(),
                "beta_mean": float(np.mean(out.trace.beta)),
                "velocity": out.trace.velocity.tolist(),
            }
        q = q0 + action
        qd = (q - q_prev) / CONTROL_DT if i > 0 else np.zeros(nj)

        lo = max(0, i - window + 1)
        snap = RobotSnapshot(
            base_ang_vel=ang_vel,
            base_lin_vel=base_vel,
            projected_gravity=gravity,
            command=cmd,
            q=q, qd=qd, q0=q0,
            action=action, action_prev=actions[0], action_prev2=actions[1],
            q_min=np.full(nj, -cfg.joint_limit), q_max=np.full(nj, cfg.joint_limit),
            qd_max=np.full(nj, cfg.joint_vel_limit),
            foot_forces=np.column_stack([np.zeros((N_FEET, 2)), normal[i]]),
            foot_vel=foot_vel,
            foot_height=feet[:, 2],
            air_time=air,
            first_contact=first,
            foot_acc_z=foot_acc_z,
            base_height=float(gait.base[i, 2]),
            feet_y_distance=float(abs(feet[0, 1] - feet[1, 1])),
            single_contact_recent=bool(np.any(single[lo : i + 1])),
        )
        foothold_r = sum(td["reward"] for td in touchdowns)
        breakdown = evaluate_all(snap, foothold_r, cfg.rewards)
        record = {
            "step": i,
            "t": t,
            "terrain": family,
            "base": gait.base[i].tolist(),
            "rpy": gait.rpy[i].tolist(),
            "feet": feet.tolist(),
            "contact": [bool(v) for v in contact[i]],
            "in_flight": not bool(np.any(contact[i])),
            "command": cmd.tolist(),
            "events": [{"foot": e.foot, "kind": e.kind} for e in step_events],
            "touchdowns": touchdowns,
            "rewards": {k: list(v) for k, v in breakdown.terms.items()},
            "total_reward": breakdown.total,
        }
        if policy_rec is not None:
            record["policy"] = policy_rec
        log.steps.append(record)
        actions = [action, actions[0]]
        q_prev, qd_prev = q, qd
    return log


# ---------------------------------------------------------------------------
# statistics


def median_absolute_deviation(values) -> float:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise StatisticError("median absolute deviation of an empty sample")
    med = np.median(v)
    return float(np.median(np.abs(v - med)))


def touchdown_mad(log: RolloutLog, tread: float | None = None, origin: float | None = None) -> float:
    """MAD of within-tread forward touchdown coordinates, pooled over feet.

    The within-tread coordinate is ``(x - origin) mod tread``.  Stairs logs
    supply both from the terrain header; other terrains need them passed in.
    """
    tds = log.touchdowns
    if not tds:
        raise StatisticError("log has no touchdowns")
    meta = log.header.get("terrain", {})
    spec = TerrainSpec.from_meta(meta) if meta else None
    if tread is None:
        if spec is None or not spec.family.startswith("stairs"):
            raise StatisticError("tread length required for non-stairs terrain")
        tread = spec.tread
    if origin is None:
        origin = spec.feature_start if spec is not None else 0.0
    yaw = float(log.header.get("script", {}).get("initial_pose", [0.0, 0.0, 0.0])[2])
    c, s = math.cos(yaw), math.sin(yaw)
    along = np.array([c * td["contact_world"][0] + s * td["contact_world"][1] for td in tds])
    return median_absolute_deviation(np.mod(along - origin, tread))


def gate_records(log: RolloutLog):
    """Gate statistics records from a rollout run with a policy."""
    out = []
    for s in log.steps:
        pol = s.get("policy")
        if pol is None:
            continue
        out.append(GateRecord(s["terrain"], bool(s["in_flight"]), float(s["rpy"][0]), float(s["rpy"][1]),
                              np.asarray(pol["beta"], dtype=np.float64)))
    return out

