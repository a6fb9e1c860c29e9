"""Rigid transforms in SE(3).

A :class:`Pose` maps points from a child frame into its parent frame,
``p_parent = R @ p_child + t``.  The same type is used for frame-to-frame
object motions expressed in the world frame (:data:`Motion`), which move
every point of one rigid body from its position at ``k-1`` to ``k``.

All point arguments accept either a single ``(3,)`` vector or an ``(N, 3)``
array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-9


class InvalidPoseError(ValueError):
    """A rotation block is not a proper rotation, or the matrix is malformed."""


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidPoseError("pose contains non-finite values")
        if np.max(np.abs(R @ R.T - np.eye(3))) > ORTHONORMAL_TOL:
            raise InvalidPoseError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidPoseError("rotation determinant is not +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def _raw(cls, R: np.ndarray, t: np.ndarray) -> "Pose":
        # Skips validation; only for results of operations on valid poses.
        obj = object.__new__(cls)
        object.__setattr__(obj, "rotation", R)
        object.__setattr__(obj, "translation", t)
        return obj

    @classmethod
    def identity(cls) -> "Pose":
        return cls._raw(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        """Build from a 4x4 homogeneous matrix (or 16 numbers, row-major)."""
        m = np.asarray(m, dtype=float)
        if m.size != 16:
            raise InvalidPoseError(f"expected 16 numbers, got {m.size}")
        m = m.reshape(4, 4)
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidPoseError("bottom row must be [0, 0, 0, 1]")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def rot_z(cls, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        c, s = np.cos(angle), np.sin(angle)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Rodrigues' formula; ``rotvec`` is axis * angle in radians."""
        w = np.asarray(rotvec, dtype=float)
        theta = np.linalg.norm(w)
        if theta < 1e-15:
            return cls(np.eye(3), translation)
        k = w / theta
        K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
        R = np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)
        return cls(R, translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def flat(self) -> list:
        """16 numbers, row-major."""
        return self.matrix().reshape(-1).tolist()

    def __matmul__(self, other: "Pose") -> "Pose":
        return se3_compose(self, other)

    def __repr__(self):
        return f"Pose(R={self.rotation.tolist()}, t={self.translation.tolist()})"


Motion = Pose


def se3_apply(t: Pose, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p @ t.rotation.T + t.translation


def se3_compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return Pose._raw(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def se3_inverse(t: Pose) -> Pose:
    Rt = t.rotation.T
    return Pose._raw(Rt.copy(), -Rt @ t.translation)


def propagate_pose(pose_prev: Pose, motion: Motion) -> Pose:
    """Move an object frame by a world-frame motion: ``L_k = H_k L_{k-1}``."""
    return se3_compose(motion, pose_prev)


def world_to_local(pose: Pose, p_world) -> np.ndarray:
    p = np.asarray(p_world, dtype=float)
    return (p - pose.translation) @ pose.rotation


def motion_from_pose_pair(pose_prev: Pose, pose_curr: Pose) -> Motion:
    return se3_compose(pose_curr, se3_inverse(pose_prev))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Sensor pose at ``eye`` whose +x axis points at ``target`` (z up, y left)."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=float)
    left = np.cross(up, fwd)
    if np.linalg.norm(left) < 1e-9:
        left = np.cross((1.0, 0.0, 0.0) if abs(fwd[0]) < 0.9 else (0.0, 1.0, 0.0), fwd)
    left /= np.linalg.norm(left)
    z = np.cross(fwd, left)
    return Pose(np.column_stack([fwd, left, z]), eye)



# ---------------------------------------------------------------------------
# stacked variants: one transform per row, rotations (N, 3, 3), translations (N, 3)


def apply_batch(rotations, translations, points) -> np.ndarray:
    """Row-wise ``se3_apply``."""
    return np.einsum("nij,nj->ni", rotations, points) + translations


def compose_batch(ra, ta, rb, tb) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``se3_compose(a, b)``; returns (rotations, translations)."""
    return ra @ rb, np.einsum("nij,nj->ni", ra, tb) + ta


def propagate_batch(r_pose, t_pose, r_motion, t_motion) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``propagate_pose``."""
    return compose_batch(r_motion, t_motion, r_pose, t_pose)


def world_to_local_batch(rotations, translations, points) -> np.ndarray:
    """Row-wise ``world_to_local``."""
    return np.einsum("nji,nj->ni", rotations, points - translations)


def rotations_from_quaternions(q) -> np.ndarray:
    """Rotation matrices from ``(N, 4)`` quaternions ``(w, x, y, z)``; normalised first."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=1,
    )
