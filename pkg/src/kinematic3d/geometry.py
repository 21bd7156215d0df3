"""Camera-frame geometry: projection, rotations, and box overlap.

Coordinates follow the KITTI camera convention: x right, y down, z forward.
Object yaw ``theta`` rotates about the camera Y axis with the KITTI
``rotation_y`` sign, so an object with yaw ``theta`` faces the direction
``(cos theta, 0, -sin theta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, NonPositiveDepth, SingularCalibration

TWO_PI = 2.0 * math.pi
MAX_CONDITION = 1e12


def wrap_angle(angle: float, low: float = -math.pi, period: float = TWO_PI) -> float:
    """Wrap ``angle`` into the half-open interval ``[low, low + period)``."""
    if low <= angle < low + period:
        # exact for values already in range
        return float(angle)
    out = (angle - low) % period + low
    if out >= low + period:
        out = low
    return float(out)


def angle_diff(a: float, b: float) -> float:
    """Signed difference ``a - b`` wrapped into ``[-pi, pi)``."""
    return wrap_angle(a - b)


@dataclass(frozen=True)
class CalibProjection:
    """A 3x4 camera projection matrix mapping metres to pixels."""

    upsilon: np.ndarray

    def __post_init__(self):
        p = np.array(self.upsilon, dtype=float)
        if p.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("projection matrix has non-finite entries")
        if p[0, 0] <= 0 or p[1, 1] <= 0:
            raise ValueError("projection matrix focal terms must be positive")
        p.setflags(write=False)
        object.__setattr__(self, "upsilon", p)
        # cached left 3x3 inverse; None marks an ill-conditioned matrix
        a = p[:, :3]
        inv = np.linalg.inv(a) if np.linalg.cond(a) <= MAX_CONDITION else None
        object.__setattr__(self, "_a_inv", inv)

    @classmethod
    def pinhole(cls, f: float, cu: float = 0.0, cv: float = 0.0, fy: float | None = None):
        fy = f if fy is None else fy
        return cls(np.array([[f, 0.0, cu, 0.0], [0.0, fy, cv, 0.0], [0.0, 0.0, 1.0, 0.0]]))


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned image box stored as left, top, width, height (pixels)."""

    x: float
    y: float
    w2: float
    h2: float

    def __post_init__(self):
        if not (self.w2 > 0 and self.h2 > 0):
            raise ValueError(f"Box2D needs positive size, got w={self.w2} h={self.h2}")

    @classmethod
    def from_corners(cls, left, top, right, bottom):
        return cls(float(left), float(top), float(right - left), float(bottom - top))

    @property
    def right(self):
        return self.x + self.w2

    @property
    def bottom(self):
        return self.y + self.h2

    @property
    def center(self):
        return (self.x + 0.5 * self.w2, self.y + 0.5 * self.h2)

    @property
    def area(self):
        return self.w2 * self.h2


@dataclass(frozen=True)
class Cuboid3D:
    """3D box in camera coordinates; ``theta`` is wrapped into ``[-pi, pi)``."""

    x: float
    y: float
    z: float
    w3: float
    h3: float
    l3: float
    theta: float

    def __post_init__(self):
        if not (self.w3 > 0 and self.h3 > 0 and self.l3 > 0):
            raise ValueError(
                f"Cuboid3D needs positive dimensions, got w={self.w3} h={self.h3} l={self.l3}"
            )
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.w3, self.h3, self.l3], dtype=float)


@dataclass(frozen=True)
class EgoMotion:
    """Rigid camera motion mapping frame t-1 camera coordinates into frame t.

    ``gamma`` is the translation in metres, ``rho`` the fixed-axis XYZ Euler
    rotation in radians (wrapped into ``[-pi, pi)``).
    """

    gamma: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rho: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float).reshape(3)
        r = np.array(self.rho, dtype=float).reshape(3)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(r))):
            raise ValueError("ego-motion entries must be finite")
        r = np.array([wrap_angle(a) for a in r])
        g.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "rho", r)

    @classmethod
    def identity(cls) -> "EgoMotion":
        return cls()

    @property
    def rotation(self) -> np.ndarray:
        return rotation_from_euler(self.rho)

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form ``[R, T; 0, 1]``."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.gamma
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "EgoMotion":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], euler_from_rotation(m[:3, :3]))

    def inverse(self) -> "EgoMotion":
        return EgoMotion.from_matrix(np.linalg.inv(self.matrix()))

    def speed(self) -> float:
        """Translation magnitude in metres per frame."""
        return float(np.linalg.norm(self.gamma))


# ---------------------------------------------------------------------------
# rotations


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(rho) -> np.ndarray:
    """Rotation for fixed-axis Euler angles applied about X, then Y, then Z.

    Equivalent to ``Rz(rho_z) @ Ry(rho_y) @ Rx(rho_x)``.
    """
    rx, ry, rz = (float(a) for a in np.asarray(rho, dtype=float).reshape(3))
    return rot_z(rz) @ rot_y(ry) @ rot_x(rx)


def euler_from_rotation(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotation_from_euler` (pitch limited to [-pi/2, pi/2])."""
    r = np.asarray(r, dtype=float)
    sy = -r[2, 0]
    sy = min(1.0, max(-1.0, sy))
    ry = math.asin(sy)
    if abs(sy) < 1.0 - 1e-12:
        rx = math.atan2(r[2, 1], r[2, 2])
        rz = math.atan2(r[1, 0], r[0, 0])
    else:
        # gimbal lock: only one combination of rx, rz is observable; pin rz
        rz = 0.0
        rx = math.atan2(-r[1, 2], r[1, 1])
    return np.array([wrap_angle(rx), wrap_angle(ry), wrap_angle(rz)])


# ---------------------------------------------------------------------------
# projection


def project_center(p, calib: CalibProjection):
    """Project a camera-frame point; returns ``(u, v, z)`` with ``z`` the homogeneous depth."""
    h = calib.upsilon @ np.append(np.asarray(p, dtype=float).reshape(3), 1.0)
    if not h[2] > 0:
        raise NonPositiveDepth(f"homogeneous depth {h[2]} is not positive")
    return float(h[0] / h[2]), float(h[1] / h[2]), float(h[2])


def backproject(u: float, v: float, z: float, calib: CalibProjection) -> np.ndarray:
    """Invert :func:`project_center` for a pixel and its homogeneous depth."""
    if not z > 0:
        raise NonPositiveDepth(f"depth {z} is not positive")
    if calib._a_inv is None:
        raise SingularCalibration("projection matrix is ill-conditioned")
    rhs = z * np.array([u, v, 1.0]) - calib.upsilon[:, 3]
    return calib._a_inv @ rhs


_CORNER_SIGNS = np.array([[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)], dtype=float)


def cuboid_corners(c: Cuboid3D) -> np.ndarray:
    """The 8 corners (8x3) of a cuboid; length runs along the heading."""
    local = _CORNER_SIGNS * (0.5 * c.l3, 0.5 * c.h3, 0.5 * c.w3)
    return local @ rot_y(c.theta).T + c.center


def bev_corners(c: Cuboid3D) -> np.ndarray:
    """Counter-clockwise footprint (4x2) in the (x, z) plane."""
    return np.array(_footprint(c))


def project_cuboid_to_box2d(c: Cuboid3D, calib: CalibProjection) -> Box2D:
    """Tight image box around the 8 projected corners of ``c``."""
    h = cuboid_corners(c) @ calib.upsilon[:, :3].T + calib.upsilon[:, 3]
    if np.any(h[:, 2] <= 0):
        raise BehindCamera("cuboid has a corner at or behind the camera plane")
    uv = h[:, :2] / h[:, 2:3]
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    return Box2D.from_corners(lo[0], lo[1], hi[0], hi[1])


# ---------------------------------------------------------------------------
# overlap


def iou_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.right, b.right) - max(a.x, b.x)
    ih = min(a.bottom, b.bottom) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return float(min(1.0, inter / (a.area + b.area - inter)))


def _signed_area(poly) -> float:
    n = len(poly)
    acc = 0.0
    for k in range(n):
        x0, y0 = poly[k][0], poly[k][1]
        x1, y1 = poly[(k + 1) % n][0], poly[(k + 1) % n][1]
        acc += x0 * y1 - y0 * x1
    return 0.5 * acc


def polygon_area(poly) -> float:
    """Shoelace area of a simple polygon (absolute value)."""
    if len(poly) < 3:
        return 0.0
    return abs(_signed_area(poly))


def _clip_lists(subject, clip):
    output = list(subject)
    n = len(clip)
    for k in range(n):
        if not output:
            break
        ax, ay = clip[k]
        bx, by = clip[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        inputs, output = output, []
        px, py = inputs[-1]
        p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
        for qx, qy in inputs:
            q_in = ex * (qy - ay) - ey * (qx - ax) >= 0.0
            if q_in != p_in:
                dx, dy = qx - px, qy - py
                denom = ex * dy - ey * dx
                if denom == 0.0:
                    # segment lies along the clip edge; either endpoint is on it
                    output.append((qx, qy))
                else:
                    t = (ey * (px - ax) - ex * (py - ay)) / denom
                    t = min(1.0, max(0.0, t))
                    output.append((px + t * dx, py + t * dy))
            if q_in:
                output.append((qx, qy))
            px, py, p_in = qx, qy, q_in
    return output


def clip_convex(subject, clip) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    subject = [(float(x), float(y)) for x, y in np.asarray(subject, dtype=float)]
    clip = [(float(x), float(y)) for x, y in np.asarray(clip, dtype=float)]
    return np.array(_clip_lists(subject, clip), dtype=float).reshape(-1, 2)


def _footprint(c: Cuboid3D):
    ct, st = math.cos(c.theta), math.sin(c.theta)
    hl, hw = c.l3 / 2.0, c.w3 / 2.0
    # heading (ct, -st) and side (st, ct) span a CCW frame
    ax, az = hl * ct, -hl * st
    bx, bz = hw * st, hw * ct
    return [
        (c.x + ax + bx, c.z + az + bz),
        (c.x - ax + bx, c.z - az + bz),
        (c.x - ax - bx, c.z - az - bz),
        (c.x + ax - bx, c.z + az - bz),
    ]


def bev_intersection(a: Cuboid3D, b: Cuboid3D) -> float:
    # footprints whose circumscribed circles are apart cannot overlap
    reach = math.hypot(a.l3, a.w3) / 2.0 + math.hypot(b.l3, b.w3) / 2.0
    if math.hypot(a.x - b.x, a.z - b.z) >= reach:
        return 0.0
    return polygon_area(_clip_lists(_footprint(a), _footprint(b)))


def iou_bev(a: Cuboid3D, b: Cuboid3D) -> float:
    inter = bev_intersection(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.l3 * a.w3 + b.l3 * b.w3 - inter
    return float(min(1.0, max(0.0, inter / union)))


def iou_3d(a: Cuboid3D, b: Cuboid3D) -> float:
    """Volume IoU; ``y`` is the vertical centre of each box."""
    y_overlap = min(a.y + a.h3 / 2, b.y + b.h3 / 2) - max(a.y - a.h3 / 2, b.y - b.h3 / 2)
    if y_overlap <= 0:
        return 0.0
    inter = bev_intersection(a, b) * y_overlap
    if inter <= 0.0:
        return 0.0
    union = a.l3 * a.w3 * a.h3 + b.l3 * b.w3 * b.h3 - inter
    return float(min(1.0, max(0.0, inter / union)))
