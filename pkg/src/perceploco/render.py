"""Analytic depth rendering of heightfield terrain with capsule self-occlusion.

Terrain rays walk the heightfield cell grid (Amanatides-Woo traversal) and
solve the bilinear patch of every visited cell exactly; capsules are solved
in closed form.  The per-pixel kernels are compiled with numba and
parallelised over pixels; each pixel writes only its own output slot, so
images do not depend on the worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import FormatError, SpecificationError
from .terrain import Heightfield, sample_height

# the bundled TBB is too old for numba; skip straight to OpenMP
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

DEFAULT_WIDTH = 64
DEFAULT_HEIGHT = 48
DEFAULT_VFOV = math.radians(58.0)
DEFAULT_PITCH_DOWN = math.radians(50.0)
DEFAULT_D_MAX = 2.0

_UNIT_TOL = 1e-9
_NO_HIT = np.inf


# ---------------------------------------------------------------------------
# geometry types


@dataclass(frozen=True)
class Capsule:
    endpoint_a: tuple[float, float, float]
    endpoint_b: tuple[float, float, float]
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise SpecificationError("capsule radius must be positive")
        if not all(math.isfinite(v) for v in (*self.endpoint_a, *self.endpoint_b)):
            raise SpecificationError("capsule endpoints must be finite")


class CapsuleScene(tuple):
    """Ordered collection of capsules; packs to an ``(n, 7)`` array for the kernels."""

    def __new__(cls, capsules=()):
        return super().__new__(cls, tuple(capsules))

    def packed(self) -> np.ndarray:
        if not self:
            return np.zeros((0, 7))
        return np.array([(*c.endpoint_a, *c.endpoint_b, c.radius) for c in self], dtype=np.float64)


def rotation_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-world rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``; positive pitch tilts +x downward."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class CameraModel:
    """Pinhole depth camera.

    The camera looks along its local +x axis (y left, z up).  ``pose`` is the
    mount position plus roll/pitch/yaw in the world; ``pitch_down`` is added
    to the pitch.  Pixels are square, so the horizontal field of view follows
    from ``vertical_fov`` and the aspect ratio.
    """

    position: tuple[float, float, float] = (0.0, 0.0, 1.0)
    rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pitch_down: float = DEFAULT_PITCH_DOWN
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    vertical_fov: float = DEFAULT_VFOV
    d_max: float = DEFAULT_D_MAX

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise SpecificationError("camera width and height must be positive")
        if not 0.0 < self.vertical_fov < math.pi:
            raise SpecificationError("vertical_fov must lie in (0, pi)")
        if not self.d_max > 0:
            raise SpecificationError("d_max must be positive")

    @property
    def focal(self) -> float:
        return 0.5 * self.height / math.tan(0.5 * self.vertical_fov)

    @property
    def horizontal_fov(self) -> float:
        return 2.0 * math.atan(0.5 * self.width / self.focal)

    def rotation(self) -> np.ndarray:
        roll, pitch, yaw = self.rpy
        return rotation_rpy(roll, pitch + self.pitch_down, yaw)

    def ray_directions(self) -> np.ndarray:
        """Unit world-frame ray directions, shape ``(height, width, 3)``."""
        f = self.focal
        u = np.arange(self.width) + 0.5 - 0.5 * self.width
        v = np.arange(self.height) + 0.5 - 0.5 * self.height
        uu, vv = np.meshgrid(u, v)
        local = np.stack([np.full_like(uu, f), -uu, -vv], axis=-1)
        local /= np.linalg.norm(local, axis=-1, keepdims=True)
        return local @ self.rotation().T


@dataclass(frozen=True, eq=False)
class DepthImage:
    raw: np.ndarray
    d_max: float
    camera: CameraModel | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        raw = np.array(self.raw, dtype=np.float64)
        raw.setflags(write=False)
        object.__setattr__(self, "raw", raw)

    @property
    def height(self) -> int:
        return self.raw.shape[0]

    @property
    def width(self) -> int:
        return self.raw.shape[1]

    @property
    def normalized(self) -> np.ndarray:
        return self.raw / self.d_max - 0.5


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True, inline="always")
def _patch_hit(oz, dz, h00, h10, h01, h11, u0, du, v0, dv, ta, tb):
    # f(t) = ray z - bilinear height, a quadratic in t on the cell interval
    b = h10 - h00
    c = h01 - h00
    e = h11 - h10 - h01 + h00
    qa = -e * du * dv
    qb = dz - b * du - c * dv - e * (u0 * dv + v0 * du)
    qc = oz - h00 - b * u0 - c * v0 - e * u0 * v0
    fa = (qa * ta + qb) * ta + qc
    if fa <= 0.0:
        return ta
    best = _NO_HIT
    if qa == 0.0:
        if qb != 0.0:
            t = -qc / qb
            if ta <= t <= tb:
                best = t
        return best
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        return best
    sq = math.sqrt(disc)
    q = -0.5 * (qb + sq) if qb >= 0.0 else -0.5 * (qb - sq)
    r1 = q / qa
    r2 = qc / q if q != 0.0 else r1
    if ta <= r1 <= tb and r1 < best:
        best = r1
    if ta <= r2 <= tb and r2 < best:
        best = r2
    return best


@numba.njit(cache=True)
def _ray_heightfield(ox, oy, oz, dx, dy, dz, elev, x0, y0, res, t_max):
    nx, ny = elev.shape
    x_lo, x_hi = x0, x0 + (nx - 1) * res
    y_lo, y_hi = y0, y0 + (ny - 1) * res
    # clip the ray to the field's xy footprint
    t_in, t_out = 0.0, t_max
    if dx == 0.0:
        if ox < x_lo or ox > x_hi:
            return _NO_HIT
    else:
        ta = (x_lo - ox) / dx
        tb = (x_hi - ox) / dx
        if ta > tb:
            ta, tb = tb, ta
        t_in = max(t_in, ta)
        t_out = min(t_out, tb)
    if dy == 0.0:
        if oy < y_lo or oy > y_hi:
            return _NO_HIT
    else:
        ta = (y_lo - oy) / dy
        tb = (y_hi - oy) / dy
        if ta > tb:
            ta, tb = tb, ta
        t_in = max(t_in, ta)
        t_out = min(t_out, tb)
    if t_in > t_out:
        return _NO_HIT

    px = (ox + t_in * dx - x0) / res
    py = (oy + t_in * dy - y0) / res
    i = min(max(int(math.floor(px)), 0), nx - 2)
    j = min(max(int(math.floor(py)), 0), ny - 2)
    if dx > 0.0:
        step_i, t_next_x, t_dx = 1, (x0 + (i + 1) * res - ox) / dx, res / dx
    elif dx < 0.0:
        step_i, t_next_x, t_dx = -1, (x0 + i * res - ox) / dx, -res / dx
    else:
        step_i, t_next_x, t_dx = 0, _NO_HIT, _NO_HIT
    if dy > 0.0:
        step_j, t_next_y, t_dy = 1, (y0 + (j + 1) * res - oy) / dy, res / dy
    elif dy < 0.0:
        step_j, t_next_y, t_dy = -1, (y0 + j * res - oy) / dy, -res / dy
    else:
        step_j, t_next_y, t_dy = 0, _NO_HIT, _NO_HIT

    t = t_in
    while t <= t_out:
        t_end = min(t_next_x, t_next_y, t_out)
        cx = x0 + i * res
        cy = y0 + j * res
        hit = _patch_hit(
            oz, dz,
            elev[i, j], elev[i + 1, j], elev[i, j + 1], elev[i + 1, j + 1],
            (ox - cx) / res, dx / res, (oy - cy) / res, dy / res,
            t, t_end,
        )
        if hit < _NO_HIT:
            return hit
        if t_end >= t_out:
            break
        if t_next_x < t_next_y:
            i += step_i
            t = t_next_x
            t_next_x += t_dx
        else:
            j += step_j
            t = t_next_y
            t_next_y += t_dy
        if i < 0 or i > nx - 2 or j < 0 or j > ny - 2:
            break
    return _NO_HIT


@numba.njit(cache=True, inline="always")
def _sphere_roots(ox, oy, oz, dx, dy, dz, cx, cy, cz, r, best):
    mx, my, mz = ox - cx, oy - cy, oz - cz
    b = mx * dx + my * dy + mz * dz
    c = mx * mx + my * my + mz * mz - r * r
    disc = b * b - c
    if disc < 0.0:
        return best
    sq = math.sqrt(disc)
    t1 = -b - sq
    t2 = -b + sq
    if 0.0 <= t1 < best:
        return t1
    if 0.0 <= t2 < best:
        return t2
    return best


@numba.njit(cache=True)
def _ray_capsule(ox, oy, oz, dx, dy, dz, cap):
    ax, ay, az = cap[0], cap[1], cap[2]
    bx, by, bz = cap[3], cap[4], cap[5]
    r = cap[6]
    best = _NO_HIT
    wx, wy, wz = bx - ax, by - ay, bz - az
    length = math.sqrt(wx * wx + wy * wy + wz * wz)
    if length > 0.0:
        wx, wy, wz = wx / length, wy / length, wz / length
        mx, my, mz = ox - ax, oy - ay, oz - az
        dw = dx * wx + dy * wy + dz * wz
        mw = mx * wx + my * wy + mz * wz
        # components perpendicular to the axis
        px, py, pz = dx - dw * wx, dy - dw * wy, dz - dw * wz
        qx, qy, qz = mx - mw * wx, my - mw * wy, mz - mw * wz
        a = px * px + py * py + pz * pz
        if a > 0.0:
            b = px * qx + py * qy + pz * qz
            c = qx * qx + qy * qy + qz * qz - r * r
            disc = b * b - a * c
            if disc >= 0.0:
                sq = math.sqrt(disc)
                for t in ((-b - sq) / a, (-b + sq) / a):
                    s = mw + t * dw
                    if 0.0 <= t < best and 0.0 <= s <= length:
                        best = t
    best = _sphere_roots(ox, oy, oz, dx, dy, dz, ax, ay, az, r, best)
    best = _sphere_roots(ox, oy, oz, dx, dy, dz, bx, by, bz, r, best)
    return best


@numba.njit(cache=True, parallel=True)
def _render_kernel(origin, dirs, elev, x0, y0, res, caps, d_max, out):
    n = dirs.shape[0]
    for k in numba.prange(n):
        dx, dy, dz = dirs[k, 0], dirs[k, 1], dirs[k, 2]
        best = _ray_heightfield(origin[0], origin[1], origin[2], dx, dy, dz, elev, x0, y0, res, d_max)
        for c in range(caps.shape[0]):
            t = _ray_capsule(origin[0], origin[1], origin[2], dx, dy, dz, caps[c])
            if t < best:
                best = t
        out[k] = d_max if best > d_max else best


@numba.njit(cache=True, parallel=True)
def _batch_heightfield(origins, dirs, elev, x0, y0, res, t_max, out):
    for k in numba.prange(origins.shape[0]):
        out[k] = _ray_heightfield(
            origins[k, 0], origins[k, 1], origins[k, 2], dirs[k, 0], dirs[k, 1], dirs[k, 2],
            elev, x0, y0, res, t_max,
        )


@numba.njit(cache=True, parallel=True)
def _batch_capsule(origins, dirs, cap, out):
    for k in numba.prange(origins.shape[0]):
        out[k] = _ray_capsule(origins[k, 0], origins[k, 1], origins[k, 2], dirs[k, 0], dirs[k, 1], dirs[k, 2], cap)


# ---------------------------------------------------------------------------
# public API


def _unit(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    norms = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise SpecificationError("ray direction must be unit-norm")
    return d


def ray_heightfield(origin, direction, hf: Heightfield, t_max: float = math.inf) -> float | None:
    """First hit distance of a ray with the bilinear terrain surface, or None."""
    o = np.asarray(origin, dtype=np.float64)
    d = _unit(direction)
    t = _ray_heightfield(o[0], o[1], o[2], d[0], d[1], d[2], hf.elevation, hf.origin[0], hf.origin[1], hf.resolution, t_max)
    return None if t == _NO_HIT or t > t_max else float(t)


def ray_capsule(origin, direction, capsule: Capsule) -> float | None:
    """Smallest non-negative intersection distance with ``capsule``, or None.

    The roots of the finite cylinder and of both end spheres are pooled, so a
    ray starting inside the capsule reports its exit distance.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = _unit(direction)
    cap = CapsuleScene([capsule]).packed()[0]
    t = _ray_capsule(o[0], o[1], o[2], d[0], d[1], d[2], cap)
    return None if t == _NO_HIT else float(t)


def rays_heightfield(origins: np.ndarray, directions: np.ndarray, hf: Heightfield, t_max: float = math.inf) -> np.ndarray:
    """Vectorised :func:`ray_heightfield`; misses are ``inf``."""
    o = np.ascontiguousarray(origins, dtype=np.float64)
    d = np.ascontiguousarray(_unit(directions))
    out = np.empty(o.shape[0])
    _batch_heightfield(o, d, hf.elevation, hf.origin[0], hf.origin[1], hf.resolution, t_max, out)
    out[out > t_max] = np.inf
    return out


def rays_capsule(origins: np.ndarray, directions: np.ndarray, capsule: Capsule) -> np.ndarray:
    """Vectorised :func:`ray_capsule`; misses are ``inf``."""
    o = np.ascontiguousarray(origins, dtype=np.float64)
    d = np.ascontiguousarray(_unit(directions))
    out = np.empty(o.shape[0])
    _batch_capsule(o, d, CapsuleScene([capsule]).packed()[0], out)
    return out


def render_depth(cam: CameraModel, hf: Heightfield, scene: CapsuleScene | None = None) -> DepthImage:
    """Render the range image seen by ``cam``; pixels without a hit read ``d_max``."""
    dirs = np.ascontiguousarray(cam.ray_directions().reshape(-1, 3))
    caps = (scene or CapsuleScene()).packed()
    out = np.empty(dirs.shape[0])
    _render_kernel(np.asarray(cam.position, dtype=np.float64), dirs, hf.elevation,
                   hf.origin[0], hf.origin[1], hf.resolution, caps, float(cam.d_max), out)
    return DepthImage(raw=out.reshape(cam.height, cam.width), d_max=cam.d_max, camera=cam)


def backproject(image: DepthImage, cam: CameraModel | None = None, keep_max: bool = False) -> np.ndarray:
    """World-frame 3-D points of the depth pixels (``d_max`` pixels dropped unless ``keep_max``)."""
    cam = cam or image.camera
    if cam is None:
        raise SpecificationError("backprojection needs the camera model")
    dirs = cam.ray_directions()
    pts = np.asarray(cam.position) + dirs * image.raw[..., None]
    mask = np.ones(image.raw.shape, bool) if keep_max else image.raw < image.d_max
    return pts[mask]


# ---------------------------------------------------------------------------
# foot-frame terrain samples

@dataclass(frozen=True)
class FootSector:
    """Sampling grid in the foot frame: forward ``x_range``, lateral ``y_range``."""

    x_range: tuple[float, float] = (0.0, 1.2)
    y_range: tuple[float, float] = (-0.08, 0.08)
    spacing: float = 0.04

    def grid(self) -> np.ndarray:
        nxs = int(round((self.x_range[1] - self.x_range[0]) / self.spacing)) + 1
        nys = int(round((self.y_range[1] - self.y_range[0]) / self.spacing)) + 1
        xs = self.x_range[0] + np.arange(nxs) * self.spacing
        ys = self.y_range[0] + np.arange(nys) * self.spacing
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def foot_to_world(points: np.ndarray, foot_pose) -> np.ndarray:
    """Map foot-frame points to the world; ``foot_pose`` is ``(x, y, z, yaw)``."""
    fx, fy, fz, yaw = foot_pose
    c, s = math.cos(yaw), math.sin(yaw)
    p = np.asarray(points, dtype=np.float64)
    wx = fx + c * p[..., 0] - s * p[..., 1]
    wy = fy + s * p[..., 0] + c * p[..., 1]
    return np.stack([wx, wy, fz + p[..., 2]], axis=-1)


def world_to_foot(points: np.ndarray, foot_pose) -> np.ndarray:
    """Inverse of :func:`foot_to_world` (yaw-only, gravity-aligned foot frame)."""
    fx, fy, fz, yaw = foot_pose
    c, s = math.cos(yaw), math.sin(yaw)
    p = np.asarray(points, dtype=np.float64)
    rx, ry = p[..., 0] - fx, p[..., 1] - fy
    return np.stack([c * rx + s * ry, -s * rx + c * ry, p[..., 2] - fz], axis=-1)


def foot_pointcloud(hf: Heightfield, foot_pose, sector: FootSector | None = None) -> np.ndarray:
    """Terrain surface samples in the forward sector of a foot, in the foot frame.

    ``foot_pose`` is ``(x, y, z, yaw)`` of the foot-end center.
    """
    sector = sector or FootSector()
    local_xy = sector.grid()
    world = foot_to_world(np.column_stack([local_xy, np.zeros(len(local_xy))]), foot_pose)
    z = sample_height(hf, world[:, 0], world[:, 1])
    return np.column_stack([local_xy, np.asarray(z) - foot_pose[2]])


# ---------------------------------------------------------------------------
# depth image files

_PGM_MAX = 65535


def write_depth_pgm(image: DepthImage, path: str | Path) -> None:
    """16-bit binary PGM (big-endian) plus a ``.meta`` sidecar with ``d_max`` and camera."""
    path = Path(path)
    scaled = np.rint(np.clip(image.raw, 0.0, image.d_max) * (_PGM_MAX / image.d_max)).astype(">u2")
    header = f"P5\n{image.width} {image.height}\n{_PGM_MAX}\n".encode("ascii")
    path.write_bytes(header + scaled.tobytes())
    lines = [f"d_max {image.d_max!r}", f"size {image.width} {image.height}"]
    cam = image.camera
    if cam is not None:
        lines += [
            "position " + " ".join(repr(float(v)) for v in cam.position),
            "rpy " + " ".join(repr(float(v)) for v in cam.rpy),
            f"pitch_down {float(cam.pitch_down)!r}",
            f"vertical_fov {float(cam.vertical_fov)!r}",
        ]
    Path(str(path) + ".meta").write_text("\n".join(lines) + "\n", encoding="ascii")


def read_depth_pgm(path: str | Path) -> DepthImage:
    path = Path(path)
    try:
        blob = path.read_bytes()
        meta_lines = Path(str(path) + ".meta").read_text(encoding="ascii").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read depth image {path}: {exc}") from exc
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1
    if tokens[0] != b"P5" or int(tokens[3]) != _PGM_MAX:
        raise FormatError(f"{path}: expected 16-bit P5 graymap")
    width, height = int(tokens[1]), int(tokens[2])
    data = blob[pos:]
    if len(data) != 2 * width * height:
        raise FormatError(f"{path}: pixel data length mismatch")
    meta = {ln.split(" ", 1)[0]: ln.split(" ", 1)[1] for ln in meta_lines if " " in ln}
    try:
        d_max = float(meta["d_max"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}.meta: missing d_max") from exc
    counts = np.frombuffer(data, dtype=">u2").reshape(height, width).astype(np.float64)
    cam = None
    if "position" in meta:
        cam = CameraModel(
            position=tuple(float(v) for v in meta["position"].split()),
            rpy=tuple(float(v) for v in meta["rpy"].split()),
            pitch_down=float(meta["pitch_down"]),
            width=width,
            height=height,
            vertical_fov=float(meta["vertical_fov"]),
            d_max=d_max,
        )
    return DepthImage(raw=counts * (d_max / _PGM_MAX), d_max=d_max, camera=cam)
