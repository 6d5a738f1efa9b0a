"""Rotation and rigid-transform algebra.

Conventions used throughout the package:

* quaternions are scalar-last ``(x, y, z, w)``;
* a :class:`Pose` maps points from its own frame into the reference frame,
  ``X_ref = R @ X_local + t``;
* the 6D rotation code is the first two columns of ``R`` concatenated
  column by column.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, NotARotation, ZeroQuaternion

_ROT_TOL = 1e-6


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a scalar-last quaternion (renormalized first)."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not n > 1e-12:
        raise ZeroQuaternion(f"quaternion norm {n:.3g} too small")
    x, y, z, w = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def check_rotation(R, tol=_ROT_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise NotARotation(f"expected a finite 3x3 matrix, got shape {R.shape}")
    if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise NotARotation("matrix is not a proper rotation")
    return R


def rotmat_to_quat(R) -> np.ndarray:
    """Unit quaternion ``(x, y, z, w)`` with ``w >= 0``.

    Uses the branch on the largest diagonal term (Shepperd) so precision
    holds near 180 degrees.
    """
    R = check_rotation(R)
    tr = np.trace(R)
    d = np.array([R[0, 0], R[1, 1], R[2, 2], tr])
    k = int(np.argmax(d))
    if k == 3:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif k == 0:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2])
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2])
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s])
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return q + 0.0


def rotmat_to_6d(R) -> np.ndarray:
    R = check_rotation(R)
    return np.concatenate([R[:, 0], R[:, 1]])


def r6_to_rotmat(r6) -> np.ndarray:
    """Recover a rotation from a (possibly non-orthonormal) 6D code."""
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape != (6,) or not np.all(np.isfinite(r6)):
        raise DegenerateInput(f"expected 6 finite values, got {r6!r}")
    a1, a2 = r6[:3], r6[3:]
    n1 = np.linalg.norm(a1)
    if not n1 > 1e-9:
        raise DegenerateInput("first 6D column has (near) zero norm")
    b1 = a1 / n1
    u2 = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u2)
    if not n2 > 1e-9:
        raise DegenerateInput("second 6D column is parallel to the first")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def r6_to_rotmat_batch(r6) -> np.ndarray:
    """Vectorized :func:`r6_to_rotmat` over a leading batch axis."""
    r6 = np.asarray(r6, dtype=np.float64).reshape(-1, 6)
    a1, a2 = r6[:, :3], r6[:, 3:]
    n1 = np.linalg.norm(a1, axis=1)
    if np.any(~(n1 > 1e-9)):
        raise DegenerateInput("first 6D column has (near) zero norm")
    b1 = a1 / n1[:, None]
    u2 = a2 - np.sum(b1 * a2, axis=1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=1)
    if np.any(~(n2 > 1e-9)):
        raise DegenerateInput("second 6D column is parallel to the first")
    b2 = u2 / n2[:, None]
    return np.stack([b1, b2, np.cross(b1, b2)], axis=2)


def axis_angle_to_rotmat(axis, angle_rad) -> np.ndarray:
    """Rodrigues' formula; a zero angle returns the exact identity."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = skew(axis)
    return np.eye(3) + np.sin(angle_rad) * K + (1.0 - np.cos(angle_rad)) * (K @ K)


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_angle_deg(R_a, R_b) -> float:
    """Geodesic angle between two rotations, in degrees, in [0, 180].

    Evaluated as ``atan2(|sin|, cos)`` of the relative rotation; this is the
    clamped ``arccos((trace - 1) / 2)`` without its loss of precision near 0
    and 180 degrees.
    """
    R = np.asarray(R_a, dtype=np.float64).T @ np.asarray(R_b, dtype=np.float64)
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(w)
    return float(np.degrees(np.arctan2(s, c)))


def rotation_angles_deg(R_a, R_b) -> np.ndarray:
    """Batch version over stacks of rotations, shape (N, 3, 3)."""
    R = np.einsum("nji,njk->nik", np.asarray(R_a, dtype=np.float64), np.asarray(R_b, dtype=np.float64))
    c = np.clip((np.trace(R, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    w = np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1)
    s = 0.5 * np.linalg.norm(w, axis=1)
    return np.degrees(np.arctan2(s, c))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (via a random unit quaternion)."""
    q = rng.normal(size=4)
    return quat_to_rotmat(q)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``X_ref = rotation @ X_local + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_quat(cls, translation, q) -> Pose:
        return cls(quat_to_rotmat(q), translation)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: Pose) -> Pose:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def quat(self) -> np.ndarray:
        return rotmat_to_quat(self.rotation)

    def allclose(self, other: Pose, atol=1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )


def relative_pose(pose_a: Pose, pose_b: Pose) -> Pose:
    """``pose_a⁻¹ ∘ pose_b``, so that ``pose_a ∘ result == pose_b``."""
    return pose_a.inverse() @ pose_b
