"""Domain types, pose algebra and parallel four-bar gripper kinematics.

Everything here is an immutable value plus pure functions, so the types can
be shared freely between node threads and the virtual-time scheduler.

Conventions:
  * timestamps are integer nanoseconds since the epoch of a declared clock
    domain (node-local or reference); plain ``int`` is used throughout.
  * quaternions are (w, x, y, z), unit norm, canonicalized so the first
    nonzero component is positive (w >= 0 in practice) -- this makes
    serialization round-trips byte-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RangeError

Timestamp = int  # nanoseconds, i64 range

NS_PER_SEC = 1_000_000_000
NS_PER_MS = 1_000_000

_I64_MIN = -(2**63)
_I64_MAX = 2**63 - 1


def seconds_to_ns(s: float) -> Timestamp:
    return int(round(s * NS_PER_SEC))


def ns_to_seconds(ns: Timestamp) -> float:
    return ns / NS_PER_SEC


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z)

def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Normalize and flip sign so the first nonzero component is positive."""
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    if n == 0.0 or not math.isfinite(n):
        raise RangeError("quaternion has zero or non-finite norm")
    q = q / n
    for c in q:
        if c > 0.0:
            break
        if c < 0.0:
            q = -q
            break
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion."""
    qv = np.array([0.0, v[0], v[1], v[2]])
    return quat_mul(quat_mul(q, qv), quat_conj(q))[1:]


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle (radians) between two unit quaternions, in [0, pi]."""
    dot = abs(float(np.dot(a, b)))
    return 2.0 * math.acos(min(1.0, dot))


def quat_slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation; exact at t=0 and t=1."""
    if t == 0.0:
        return np.array(a, dtype=float)
    if t == 1.0:
        return quat_canonical(b)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -np.asarray(b)
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_canonical(a + t * (b - a))  # nearly parallel
    omega = math.acos(min(1.0, dot))
    s = math.sin(omega)
    q = (math.sin((1.0 - t) * omega) * np.asarray(a) + math.sin(t * omega) * np.asarray(b)) / s
    return quat_canonical(q)


def quat_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return quat_canonical(np.array([math.cos(h), *(math.sin(h) * axis)]))


# ---------------------------------------------------------------------------
# core value types

@dataclass(frozen=True, eq=False)
class Pose6D:
    """Rigid pose: position (m) + unit quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = quat_canonical(np.asarray(self.orientation, dtype=float).reshape(4))
        if not np.all(np.isfinite(p)):
            raise RangeError("pose position must be finite")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Pose6D":
        return Pose6D(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))


@dataclass(frozen=True, eq=False)
class Wrench6D:
    """6D force/torque: force (N) + torque (N*m)."""

    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.force, dtype=float).reshape(3)
        t = np.asarray(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise RangeError("wrench components must be finite")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    @staticmethod
    def zero() -> "Wrench6D":
        return Wrench6D(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @staticmethod
    def from_vector(v) -> "Wrench6D":
        v = np.asarray(v, dtype=float).reshape(6)
        return Wrench6D(v[:3], v[3:])


@dataclass(frozen=True)
class GripState:
    """Motor-side gripper state at one control tick."""

    width: float
    setpoint: float
    motor_angle: float
    grip_force: float
    stalled: bool

    def __post_init__(self):
        if self.grip_force < 0.0:
            raise RangeError("grip_force must be >= 0")
        if self.width < 0.0:
            raise RangeError("width must be >= 0")


@dataclass(frozen=True)
class FourBarParams:
    """Parallel four-bar geometry: w(theta) = w0 + 2 L (1 - cos theta)."""

    link_length: float = 0.05
    closed_width: float = 0.01
    theta_min: float = 0.0
    theta_max: float = math.pi / 2
    torque_cap: float = 0.5

    def __post_init__(self):
        if self.link_length <= 0.0:
            raise RangeError("link_length must be > 0")
        if self.closed_width < 0.0:
            raise RangeError("closed_width must be >= 0")
        if not (0.0 <= self.theta_min < self.theta_max <= math.pi / 2):
            raise RangeError("require 0 <= theta_min < theta_max <= pi/2")
        if self.torque_cap < 0.0:
            raise RangeError("torque_cap must be >= 0")

    @property
    def w_max(self) -> float:
        return fourbar_width(self.theta_max, self)

    @property
    def w_min(self) -> float:
        return fourbar_width(self.theta_min, self)


# ---------------------------------------------------------------------------
# pose operations

def pose_compose(a: Pose6D, b: Pose6D) -> Pose6D:
    """Rigid composition a . b (apply b in a's frame)."""
    p = a.position + quat_rotate(a.orientation, b.position)
    q = quat_mul(a.orientation, b.orientation)
    return Pose6D(p, q)


def pose_inverse(a: Pose6D) -> Pose6D:
    qc = quat_conj(a.orientation)
    return Pose6D(-quat_rotate(qc, a.position), qc)


def pose_delta(a: Pose6D, b: Pose6D) -> Pose6D:
    """Relative pose taking a to b, expressed in a's frame."""
    return pose_compose(pose_inverse(a), b)


def pose_interpolate(a: Pose6D, b: Pose6D, t: float) -> Pose6D:
    """Linear position blend + shortest-arc quaternion blend, t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"interpolation parameter {t} outside [0, 1]")
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    p = (1.0 - t) * a.position + t * b.position
    q = quat_slerp(a.orientation, b.orientation, t)
    return Pose6D(p, q)


def pose_allclose(a: Pose6D, b: Pose6D, tol: float = 1e-9) -> bool:
    return bool(
        np.allclose(a.position, b.position, atol=tol)
        and quat_angle(a.orientation, b.orientation) <= tol * 10
    )


# ---------------------------------------------------------------------------
# parallel four-bar kinematics (quasi-static)

def _check_theta(theta: float, p: FourBarParams) -> None:
    if not p.theta_min <= theta <= p.theta_max:
        raise RangeError(
            f"theta {theta} outside [{p.theta_min}, {p.theta_max}]"
        )


def fourbar_width(theta: float, p: FourBarParams) -> float:
    """Jaw width w(theta) = w0 + 2 L (1 - cos theta)."""
    _check_theta(theta, p)
    return p.closed_width + 2.0 * p.link_length * (1.0 - math.cos(theta))


def fourbar_theta(width: float, p: FourBarParams) -> float:
    """Inverse of fourbar_width, clamped into theta_range."""
    c = 1.0 - (width - p.closed_width) / (2.0 * p.link_length)
    theta = math.acos(min(1.0, max(-1.0, c)))
    return min(p.theta_max, max(p.theta_min, theta))


def fourbar_fingertip_path(theta: float, p: FourBarParams) -> tuple[float, float]:
    """Per-finger arc path: opening x = L (1 - cos theta), height z = L sin theta.

    The parallelogram keeps fingertip orientation constant; only the (x, z)
    offset depends on theta.
    """
    _check_theta(theta, p)
    return (
        p.link_length * (1.0 - math.cos(theta)),
        p.link_length * math.sin(theta),
    )


def fourbar_jaw_force(theta: float, motor_torque: float, p: FourBarParams,
                      force_cap: float) -> float:
    """Per-finger jaw force F = min(cap, tau / (L sin theta)).

    Mechanical advantage grows without bound toward full closure; the cap
    clamps the theta -> 0 singularity so control loops never fault at the
    closed limit.
    """
    _check_theta(theta, p)
    if motor_torque < 0.0:
        raise RangeError("motor torque must be >= 0")
    if motor_torque == 0.0:
        return 0.0
    s = math.sin(theta)
    if s == 0.0:
        return force_cap
    return min(force_cap, motor_torque / (p.link_length * s))
