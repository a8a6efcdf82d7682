"""Rigid-body poses and the SE(3) tangent-space operations the planner needs.

Twists, wrenches, and pose errors are 6-vectors ordered (linear; angular).
Configuration files serialize a pose as translation (x, y, z) plus a unit
quaternion (w, x, y, z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k

# Logs within this margin of the pi rotation branch cut are refused rather
# than silently returning an arbitrary axis.
_BRANCH_MARGIN = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix of a 3-vector."""
    return _k.skew(np.ascontiguousarray(v, dtype=np.float64))


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix for an axis-angle 3-vector."""
    return _k.so3_exp(np.ascontiguousarray(w, dtype=np.float64))


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vector of a rotation matrix.

    Raises ValueError at (or numerically near) the pi branch cut, where the
    axis is not unique.
    """
    R = np.ascontiguousarray(R, dtype=np.float64)
    w = _k.so3_log(R)
    if np.linalg.norm(w) > np.pi - _BRANCH_MARGIN:
        raise ValueError("rotation angle at the pi branch cut; log undefined")
    return w


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation, arccos((trace(R) - 1) / 2)."""
    c = (float(np.trace(R)) - 1.0) / 2.0
    return float(np.arccos(min(1.0, max(-1.0, c))))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world point = rotation @ local point + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.ascontiguousarray(self.rotation, dtype=np.float64)
        t = np.ascontiguousarray(self.translation, dtype=np.float64)
        assert R.shape == (3, 3) and t.shape == (3,)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-8, "rotation not orthonormal"
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=np.float64) + self.translation

    def to_quat(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z), w >= 0."""
        return _k.rot_to_quat(self.rotation)

    @staticmethod
    def from_quat(translation: np.ndarray, quat: np.ndarray) -> "Pose":
        quat = np.ascontiguousarray(quat, dtype=np.float64)
        nrm = np.linalg.norm(quat)
        assert abs(nrm - 1.0) < 1e-6, "quaternion must be unit length"
        return Pose(_k.quat_to_rot(quat / nrm), translation)

    def serialize(self) -> dict:
        return {"xyz": [float(v) for v in self.translation],
                "quat_wxyz": [float(v) for v in self.to_quat()]}

    @staticmethod
    def deserialize(obj: dict) -> "Pose":
        return Pose.from_quat(np.asarray(obj["xyz"], dtype=float),
                              np.asarray(obj["quat_wxyz"], dtype=float))


def exp_pose(twist: np.ndarray) -> Pose:
    """Exponential map of a (linear; angular) tangent 6-vector."""
    xi = np.ascontiguousarray(twist, dtype=np.float64)
    assert xi.shape == (6,)
    R, t = _k.se3_exp(xi)
    return Pose(R, t)


def log_pose(pose: Pose) -> np.ndarray:
    """Tangent 6-vector (linear; angular) of a pose; inverse of exp_pose.

    Raises ValueError near the pi rotation branch cut.
    """
    if rotation_angle(pose.rotation) > np.pi - _BRANCH_MARGIN:
        raise ValueError("rotation angle at the pi branch cut; log undefined")
    return _k.se3_log(pose.rotation, pose.translation)


def pose_diff(ref: Pose, actual: Pose) -> np.ndarray:
    """Right-sided pose error log(ref^-1 actual) as a (linear; angular) 6-vector.

    Zero iff the poses coincide; expressed in the reference frame's tangent.
    """
    return log_pose(ref.inverse() @ actual)


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SE(3) at tangent xi = (linear; angular).

    Maps a perturbation applied on the right of exp(xi) to the change of the
    log: d/de log(exp(xi) exp(e d)) = Jr_inv(xi) d at e = 0.  This is what
    turns frame Jacobians into exact pose-error Jacobians.
    """
    return _k.se3_jr_inv(np.ascontiguousarray(xi, dtype=np.float64))
