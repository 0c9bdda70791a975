"""Rigid-transform algebra and gravity-alignment math.

All Euler angles in this codebase are fixed-axis (extrinsic) X-Y-Z:
``R(roll, pitch, yaw) = Rz(yaw) @ Ry(pitch) @ Rx(roll)``, rotations applied
about the fixed world axes in X-then-Y-then-Z order.  Rotations are stored
as 3x3 matrices; quaternions appear only at file boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ZeroVectorError

ORTHONORMAL_TOL = 1e-9
ZERO_VECTOR_FLOOR = 1e-12
UNIT_QUAT_TOL = 1e-6


class RigidTransform:
    """An SE(3) pose: orthonormal rotation (det +1) plus translation in meters."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation, check: bool = True):
        rotation = np.asarray(rotation, dtype=float)
        translation = np.asarray(translation, dtype=float)
        if check:
            if rotation.shape != (3, 3) or translation.shape != (3,):
                raise ValueError("rotation must be 3x3 and translation length 3")
            err = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
            if err > ORTHONORMAL_TOL:
                raise ValueError(f"rotation not orthonormal (max defect {err:.2e})")
            if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOL:
                raise ValueError("rotation determinant is not +1")
        self.rotation = rotation
        self.translation = translation

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3), check=False)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (3,) or (n, 3) from this frame into the parent frame."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """The 4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __repr__(self) -> str:
        return f"RigidTransform(t={self.translation.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a applied after b: the matrix product a . b."""
    return RigidTransform(
        a.rotation @ b.rotation,
        a.rotation @ b.translation + a.translation,
        check=False,
    )


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation, check=False)


@dataclass(frozen=True)
class AccelSample:
    """One accelerometer reading (m/s^2): z up, y into the screen, x left.

    A unit surface normal from a ground-parallel plane is ingested through
    the same type.
    """

    x: float
    y: float
    z: float

    def magnitude(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


def _require_nonzero(a: AccelSample) -> None:
    if a.magnitude() < ZERO_VECTOR_FLOOR:
        raise ZeroVectorError("acceleration vector is (numerically) zero")


def pitch_from_accel(a: AccelSample) -> float:
    """tan^-1(x / sqrt(y^2 + z^2)); how far gravity tips toward the x axis."""
    _require_nonzero(a)
    return math.atan2(a.x, math.hypot(a.y, a.z))


def roll_from_accel(a: AccelSample) -> float:
    """tan^-1(y / sqrt(x^2 + z^2)); how far gravity tips toward the y axis."""
    _require_nonzero(a)
    return math.atan2(a.y, math.hypot(a.x, a.z))


def theta_from_accel(a: AccelSample) -> float:
    """tan^-1(sqrt(x^2 + y^2) / z): total angle off upright.

    Diagnostic only; a single angle cannot reorient the frame.  Computed as
    atan2(hypot(x, y), z), which equals acos(z / |a|) for every input and
    reduces to the plain arctan form when z > 0.
    """
    _require_nonzero(a)
    return math.atan2(math.hypot(a.x, a.y), a.z)


def _rx(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def upright_from_accel(a: AccelSample) -> RigidTransform:
    """Rotation taking the first-camera frame to a gravity-upright world frame.

    Two fixed-axis rotations, X first then Y, chosen so the measured gravity
    direction lands exactly on world +z.  The about-x angle is atan2(y, z)
    (the tilt seen in the y-z plane); it equals roll_from_accel whenever the
    x component is zero.  The about-y angle is -pitch_from_accel.  Yaw is
    deliberately zero: gravity carries no yaw information.
    """
    _require_nonzero(a)
    pitch = pitch_from_accel(a)
    tilt_x = math.atan2(a.y, a.z)
    return RigidTransform(_ry(-pitch) @ _rx(tilt_x), np.zeros(3), check=False)


def world_to_robot() -> RigidTransform:
    """Constant remap from the upright camera-world axes to robot axes.

    Fixed-axis RPY [-pi/2, 0, -pi/2] (exact pi/2): world forward (camera
    optical axis) becomes robot x out toward the table, world right becomes
    robot -y (robot y points left), world down becomes robot -z.
    """
    return RigidTransform(
        rpy_to_matrix(-math.pi / 2, 0.0, -math.pi / 2), np.zeros(3), check=False
    )


@dataclass(frozen=True)
class EulerFixedRPY:
    """Fixed-axis (extrinsic X-Y-Z) roll, pitch, yaw in radians."""

    roll: float
    pitch: float
    yaw: float

    def to_matrix(self) -> np.ndarray:
        return rpy_to_matrix(self.roll, self.pitch, self.yaw)

    @staticmethod
    def from_matrix(r: np.ndarray) -> "EulerFixedRPY":
        return EulerFixedRPY(*matrix_to_rpy(r))


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return _rz(yaw) @ _ry(pitch) @ _rx(roll)


def matrix_to_rpy(r: np.ndarray) -> tuple[float, float, float]:
    """Inverse of rpy_to_matrix; angle values may alias near pitch = +-pi/2."""
    r = np.asarray(r, dtype=float)
    cos_pitch = math.hypot(r[2, 1], r[2, 2])
    pitch = math.atan2(-r[2, 0], cos_pitch)
    if cos_pitch > 1e-9:
        roll = math.atan2(r[2, 1], r[2, 2])
        yaw = math.atan2(r[1, 0], r[0, 0])
    else:
        # gimbal: roll and yaw are coupled; fold everything into yaw
        roll = 0.0
        yaw = math.atan2(-r[0, 1], r[1, 1])
    return roll, pitch, yaw


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion [w, x, y, z] to rotation matrix."""
    w, x, y, z = (float(v) for v in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion [w, x, y, z], w >= 0."""
    r = np.asarray(r, dtype=float)
    trace = r[0, 0] + r[1, 1] + r[2, 2]
    if trace > 0:
        s = math.sqrt(trace + 1.0) * 2
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def transform_to_dict(t: RigidTransform) -> dict:
    """JSON form {"t": [x, y, z], "q": [w, x, y, z]}."""
    return {
        "t": [float(v) for v in t.translation],
        "q": [float(v) for v in matrix_to_quat(t.rotation)],
    }


def transform_from_dict(d: dict) -> RigidTransform:
    q = np.asarray(d["q"], dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > UNIT_QUAT_TOL:
        raise ValueError(f"quaternion is not unit length: |q| = {np.linalg.norm(q):.8f}")
    return RigidTransform(quat_to_matrix(q), np.asarray(d["t"], dtype=float))


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix by polar projection (SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=float))
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out
