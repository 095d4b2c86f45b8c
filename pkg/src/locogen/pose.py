"""SE(3) and SE(2) rigid-transform algebra.

Poses are unit-quaternion + translation pairs. All operations are pure and
return new values; a Pose is safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Equality tolerance for pose values: well above double-precision noise for
# chains of ~100 compositions.
POSE_TOL = 1e-9


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(q @ q))
    if n < 1e-12:
        raise ValueError("quaternion norm is zero")
    q = q / n
    # Canonical sign (w >= 0) so equality tests are single-valued under the
    # double cover; tie-break on the first nonzero component.
    if q[0] < 0.0 or (q[0] == 0.0 and _first_nonzero_negative(q)):
        q = -q
    return q


def _first_nonzero_negative(q: np.ndarray) -> bool:
    for v in q[1:]:
        if v != 0.0:
            return v < 0.0
    return False


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion."""
    w, x, y, z = q
    # v + 2 * qvec x (qvec x v + w v), expanded for speed
    ux = y * v[2] - z * v[1] + w * v[0]
    uy = z * v[0] - x * v[2] + w * v[1]
    uz = x * v[1] - y * v[0] + w * v[2]
    return np.array(
        [
            v[0] + 2.0 * (y * uz - z * uy),
            v[1] + 2.0 * (z * ux - x * uz),
            v[2] + 2.0 * (x * uy - y * ux),
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle of a unit quaternion, in [0, pi]."""
    w = min(1.0, abs(float(q[0])))
    return 2.0 * math.acos(w)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = math.sqrt(float(axis @ axis))
    if n < 1e-12:
        raise ValueError("degenerate rotation axis")
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], (math.sin(half) / n) * axis])


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose:
    """Rigid transform: unit quaternion (w, x, y, z) plus translation (m).

    The quaternion is renormalized and sign-canonicalized (w >= 0) at
    construction, so two equal rotations always compare component-wise equal.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _normalize_quat(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got shape {t.shape}")
        object.__setattr__(self, "translation", t.copy())
        self.rotation.flags.writeable = False
        self.translation.flags.writeable = False

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_axis_angle(np.asarray(axis, dtype=np.float64), angle),
                    np.asarray(translation, dtype=np.float64))

    @staticmethod
    def from_translation(t) -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.asarray(t, dtype=np.float64))

    @staticmethod
    def from_array(a) -> "Pose":
        """Build from the 7-number serialization [qw, qx, qy, qz, tx, ty, tz]."""
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (7,):
            raise ValueError(f"pose array must have 7 entries, got {a.shape}")
        return Pose(a[:4], a[4:])

    def as_array(self) -> np.ndarray:
        """Serialize as [qw, qx, qy, qz, tx, ty, tz]."""
        return np.concatenate([self.rotation, self.translation])

    def to_matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix form."""
        w, x, y, z = self.rotation
        m = np.eye(4)
        m[0, 0] = 1.0 - 2.0 * (y * y + z * z)
        m[0, 1] = 2.0 * (x * y - w * z)
        m[0, 2] = 2.0 * (x * z + w * y)
        m[1, 0] = 2.0 * (x * y + w * z)
        m[1, 1] = 1.0 - 2.0 * (x * x + z * z)
        m[1, 2] = 2.0 * (y * z - w * x)
        m[2, 0] = 2.0 * (x * z - w * y)
        m[2, 1] = 2.0 * (y * z + w * x)
        m[2, 2] = 1.0 - 2.0 * (x * x + y * y)
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        """Build from a 4x4 homogeneous matrix (rotation part must be orthonormal)."""
        m = np.asarray(m, dtype=np.float64)
        r = m[:3, :3]
        tr = float(np.trace(r))
        if tr > 0.0:
            s = math.sqrt(tr + 1.0) * 2.0
            q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                          (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                          (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
        elif r[1, 1] > r[2, 2]:
            s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                          0.25 * s, (r[1, 2] + r[2, 1]) / s])
        else:
            s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                          (r[1, 2] + r[2, 1]) / s, 0.25 * s])
        return Pose(q, m[:3, 3])

    def apply(self, point) -> np.ndarray:
        """Map a point from this pose's local frame into the parent frame."""
        return quat_rotate(self.rotation, np.asarray(point, dtype=np.float64)) + self.translation


def compose(a: Pose, b: Pose) -> Pose:
    """Rigid-transform product a∘b (apply b first in a's frame)."""
    return Pose(quat_multiply(a.rotation, b.rotation),
                quat_rotate(a.rotation, b.translation) + a.translation)


def invert(p: Pose) -> Pose:
    """Inverse transform: compose(p, invert(p)) is the identity."""
    qc = quat_conjugate(p.rotation)
    return Pose(qc, -quat_rotate(qc, p.translation))


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    """Interpolate between two poses.

    Translation is linear; rotation follows the shortest-arc spherical path.
    s=0 yields a, s=1 yields b.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation parameter must be in [0, 1], got {s}")
    qa, qb = a.rotation, b.rotation
    dot = float(qa @ qb)
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = qa + s * (qb - qa)
    else:
        theta = math.acos(min(1.0, dot))
        st = math.sin(theta)
        q = (math.sin((1.0 - s) * theta) / st) * qa + (math.sin(s * theta) / st) * qb
    t = (1.0 - s) * a.translation + s * b.translation
    return Pose(q, t)


def rotation_distance(a: Pose, b: Pose) -> float:
    """Geodesic angle (rad) between the rotations of two poses."""
    return quat_angle(quat_multiply(quat_conjugate(a.rotation), b.rotation))


def translation_distance(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


def poses_close(a: Pose, b: Pose, tol: float = POSE_TOL) -> bool:
    """Equality within tol in translation and quaternion component distance."""
    return (float(np.max(np.abs(a.translation - b.translation))) <= tol
            and float(np.max(np.abs(a.rotation - b.rotation))) <= tol)


@dataclass(frozen=True)
class PlanarPose:
    """Mobile-base pose: planar position, yaw in (-pi, pi], and torso height."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    height: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        object.__setattr__(self, "height", float(self.height))

    def to_pose(self) -> Pose:
        """Lift to SE(3): yaw rotation about +z, translation (x, y, height)."""
        return Pose.from_axis_angle(np.array([0.0, 0.0, 1.0]), self.yaw,
                                    np.array([self.x, self.y, self.height]))

    def compose_offset(self, dx: float, dy: float, dyaw: float, dheight: float = 0.0) -> "PlanarPose":
        """Apply a local-frame planar offset (dx forward, dy lateral)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return PlanarPose(self.x + c * dx - s * dy,
                          self.y + s * dx + c * dy,
                          self.yaw + dyaw,
                          self.height + dheight)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw, self.height])

    @staticmethod
    def from_array(a) -> "PlanarPose":
        a = np.asarray(a, dtype=np.float64)
        return PlanarPose(a[0], a[1], a[2], a[3])


def planar_transform(t: PlanarPose, p: PlanarPose) -> PlanarPose:
    """Move a planar pose by a rigid planar transform t (height of t adds)."""
    c, s = math.cos(t.yaw), math.sin(t.yaw)
    return PlanarPose(t.x + c * p.x - s * p.y,
                      t.y + s * p.x + c * p.y,
                      t.yaw + p.yaw,
                      t.height + p.height)
