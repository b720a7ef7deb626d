"""3-D primitives shared by the whole engine.

Everything here is pure: immutable values in, new values out, no hidden
state.  Coordinates are right-handed, +Y up, in meters.  Angles cross the
public API in degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class DegenerateCorrespondences(ValueError):
    """Frame alignment was asked to fit fewer than 3 usable point pairs."""


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        for c in (self.x, self.y, self.z):
            if not math.isfinite(c):
                raise ValueError(f"non-finite component in Vec3: {c!r}")

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __mul__(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    __rmul__ = __mul__

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: "Vec3") -> "Vec3":
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize zero vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def as_tuple(self) -> tuple:
        return (self.x, self.y, self.z)

    @staticmethod
    def from_seq(seq: Sequence[float]) -> "Vec3":
        x, y, z = seq
        return Vec3(float(x), float(y), float(z))


_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Ray:
    origin: Vec3
    direction: Vec3  # unit

    def __post_init__(self):
        if abs(self.direction.norm() - 1.0) > _UNIT_TOL:
            raise ValueError("ray direction must be unit length")


@dataclass(frozen=True)
class Aabb:
    center: Vec3
    half_extents: Vec3  # componentwise > 0

    def __post_init__(self):
        h = self.half_extents
        if not (h.x > 0 and h.y > 0 and h.z > 0):
            raise ValueError("Aabb half extents must be positive")

    def contains(self, p: Vec3, eps: float = 0.0) -> bool:
        d = p - self.center
        h = self.half_extents
        return (
            abs(d.x) <= h.x + eps
            and abs(d.y) <= h.y + eps
            and abs(d.z) <= h.z + eps
        )


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, w-first) followed by translation."""

    quat: tuple  # (w, x, y, z)
    translation: Vec3

    def __post_init__(self):
        w, x, y, z = self.quat
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if abs(n - 1.0) > _UNIT_TOL:
            raise ValueError("quaternion must be unit length")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform((1.0, 0.0, 0.0, 0.0), Vec3(0.0, 0.0, 0.0))

    @staticmethod
    def from_matrix(rot: np.ndarray, translation: Vec3) -> "RigidTransform":
        return RigidTransform(_quat_from_matrix(rot), translation)

    def rotation_matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.quat)

    def apply(self, p: Vec3) -> Vec3:
        q = _quat_rotate(self.quat, p)
        return q + self.translation

    def inverse(self) -> "RigidTransform":
        w, x, y, z = self.quat
        conj = (w, -x, -y, -z)
        t = _quat_rotate(conj, self.translation)
        return RigidTransform(conj, Vec3(-t.x, -t.y, -t.z))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        q = _quat_mul(self.quat, other.quat)
        t = _quat_rotate(self.quat, other.translation) + self.translation
        n = math.sqrt(sum(c * c for c in q))
        q = tuple(c / n for c in q)
        return RigidTransform(q, t)

    def rotation_angle_rad(self) -> float:
        w = min(1.0, max(-1.0, abs(self.quat[0])))
        return 2.0 * math.acos(w)


def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _quat_rotate(q, v: Vec3) -> Vec3:
    w, x, y, z = q
    u = Vec3(x, y, z)
    uv = u.cross(v)
    uuv = u.cross(uv)
    return v + 2.0 * w * uv + 2.0 * uuv


def _quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def _quat_from_matrix(m: np.ndarray) -> tuple:
    # Shepperd's method: pick the largest diagonal combination for stability.
    t = float(np.trace(m))
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    n = math.sqrt(w * w + x * x + y * y + z * z)
    q = (w / n, x / n, y / n, z / n)
    if q[0] < 0:
        q = tuple(-c for c in q)
    return q


@dataclass(frozen=True)
class Frustum:
    """Rectangular view cone: apex, orthonormal forward/up, full FOV angles."""

    apex: Vec3
    forward: Vec3  # unit
    up: Vec3  # unit, perpendicular to forward
    hfov_deg: float
    vfov_deg: float

    def __post_init__(self):
        if abs(self.forward.norm() - 1.0) > _UNIT_TOL:
            raise ValueError("frustum forward must be unit length")
        if abs(self.up.norm() - 1.0) > _UNIT_TOL:
            raise ValueError("frustum up must be unit length")
        if abs(self.forward.dot(self.up)) > 1e-6:
            raise ValueError("frustum forward and up must be perpendicular")
        if not (0.0 < self.hfov_deg < 180.0 and 0.0 < self.vfov_deg < 180.0):
            raise ValueError("FOV angles must lie in (0, 180) degrees")

    def right(self) -> Vec3:
        return self.up.cross(self.forward)

    @staticmethod
    def from_gaze(ray: Ray, hfov_deg: float, vfov_deg: float) -> "Frustum":
        """Head frustum assumed to point along the gaze direction."""
        f = ray.direction
        world_up = Vec3(0.0, 1.0, 0.0)
        if abs(f.dot(world_up)) > 1.0 - 1e-6:
            world_up = Vec3(0.0, 0.0, 1.0)
        up = (world_up - f * world_up.dot(f)).normalized()
        return Frustum(ray.origin, f, up, hfov_deg, vfov_deg)


def point_at(ray: Ray, t: float) -> Vec3:
    if not math.isfinite(t) or t < 0.0:
        raise ValueError(f"ray parameter must be finite and >= 0, got {t!r}")
    return ray.origin + ray.direction * t


def ray_aabb_intersect(ray: Ray, box: Aabb) -> Optional[float]:
    """Smallest t >= 0 where the ray touches the box (slab method).

    A ray starting inside the box reports t = 0.  Returns None on a miss.
    """
    o = ray.origin.as_tuple()
    d = ray.direction.as_tuple()
    c = box.center.as_tuple()
    h = box.half_extents.as_tuple()
    tnear = 0.0
    tfar = math.inf
    for i in range(3):
        lo = c[i] - h[i]
        hi = c[i] + h[i]
        if d[i] == 0.0:
            if o[i] < lo or o[i] > hi:
                return None
            continue
        inv = 1.0 / d[i]
        t1 = (lo - o[i]) * inv
        t2 = (hi - o[i]) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tnear:
            tnear = t1
        if t2 < tfar:
            tfar = t2
        if tnear > tfar:
            return None
    if tfar < 0.0:
        return None
    return tnear


def align_frames(pairs: Sequence[tuple]) -> RigidTransform:
    """Least-squares rigid transform mapping the first frame onto the second.

    Closed-form solution via SVD of the cross-covariance (no scale, no
    reflection).  Needs at least 3 non-collinear source points.
    """
    if len(pairs) < 3:
        raise DegenerateCorrespondences(
            f"need at least 3 point pairs, got {len(pairs)}"
        )
    src = np.array([p[0].as_tuple() for p in pairs], dtype=float)
    dst = np.array([p[1].as_tuple() for p in pairs], dtype=float)
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    a = src - c_src
    b = dst - c_dst
    scale = float(np.abs(a).max())
    sv = np.linalg.svd(a, compute_uv=False)
    if scale == 0.0 or sv[1] < 1e-9 * max(scale, 1.0):
        raise DegenerateCorrespondences("source points are collinear or coincident")
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_dst - rot @ c_src
    return RigidTransform.from_matrix(rot, Vec3.from_seq(t))


def angular_distance(a: Vec3, b: Vec3) -> float:
    """Angle between two unit vectors, in degrees."""
    d = max(-1.0, min(1.0, a.dot(b)))
    return math.degrees(math.acos(d))


def _frustum_angles(f: Frustum, p: Vec3) -> tuple:
    """(horizontal, vertical) direction angles of p seen from the apex, degrees.

    atan2 based, so points behind the apex map to angles beyond 90 degrees.
    """
    v = p - f.apex
    z = v.dot(f.forward)
    ax = math.degrees(math.atan2(v.dot(f.right()), z))
    ay = math.degrees(math.atan2(v.dot(f.up), z))
    return ax, ay


def frustum_contains(f: Frustum, p: Vec3) -> bool:
    v = p - f.apex
    if v.dot(f.forward) <= 0.0:
        return False
    ax, ay = _frustum_angles(f, p)
    return abs(ax) <= f.hfov_deg / 2.0 and abs(ay) <= f.vfov_deg / 2.0


def clamp_to_frustum(f: Frustum, p: Vec3, inset_deg: float = 2.0) -> Vec3:
    """Pull p to the nearest in-frustum direction, preserving range from apex.

    Out-of-view points land on the frustum boundary inset by ``inset_deg``,
    so the result always satisfies frustum_contains.
    """
    v = p - f.apex
    r = v.norm()
    if r == 0.0:
        raise ValueError("cannot clamp the frustum apex itself")
    if frustum_contains(f, p):
        return p
    ax, ay = _frustum_angles(f, p)
    lim_x = f.hfov_deg / 2.0 - inset_deg
    lim_y = f.vfov_deg / 2.0 - inset_deg
    cx = max(-lim_x, min(lim_x, ax))
    cy = max(-lim_y, min(lim_y, ay))
    d = (
        f.forward
        + f.right() * math.tan(math.radians(cx))
        + f.up * math.tan(math.radians(cy))
    ).normalized()
    return f.apex + d * r


def rotate_towards(a: Vec3, b: Vec3, max_deg: float) -> Vec3:
    """Rotate unit vector a toward unit vector b by at most max_deg degrees."""
    angle = angular_distance(a, b)
    if angle <= max_deg or angle == 0.0:
        return b if angle <= max_deg else a
    axis = a.cross(b)
    n = axis.norm()
    if n < 1e-12:
        # Antiparallel: pick any perpendicular axis.
        axis = perpendicular(a)
    else:
        axis = axis * (1.0 / n)
    return _rotate_about(a, axis, math.radians(max_deg))


def _rotate_about(v: Vec3, axis: Vec3, angle_rad: float) -> Vec3:
    # Rodrigues rotation.
    c = math.cos(angle_rad)
    s = math.sin(angle_rad)
    return (v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))).normalized()


def perpendicular(v: Vec3) -> Vec3:
    """Any unit vector perpendicular to v."""
    ref = Vec3(1.0, 0.0, 0.0) if abs(v.x) < 0.9 else Vec3(0.0, 1.0, 0.0)
    return v.cross(ref).normalized()
