"""Rigid transforms (unit quaternion + translation) and rigid handle constraints."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mesh import TetMesh
from .validation import as_points, as_vector3, check_unit_quaternion


@dataclass(frozen=True)
class RigidPose:
    """Rigid transform ``x -> R(q) x + t`` with quaternion ``q = [w, x, y, z]``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_unit_quaternion(self.rotation))
        object.__setattr__(self, "translation", as_vector3(self.translation, "translation"))

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0), pivot=None) -> "RigidPose":
        """Rotation of ``angle`` radians about ``axis``, optionally about a pivot point."""
        axis = as_vector3(axis, "axis")
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise ValidationError("axis must be nonzero")
        axis = axis / norm
        half = 0.5 * angle
        q = np.concatenate([[np.cos(half)], np.sin(half) * axis])
        q /= np.linalg.norm(q)
        t = as_vector3(translation, "translation")
        pose = cls(q, t)
        if pivot is not None:
            pivot = as_vector3(pivot, "pivot")
            t = t + pivot - pose.matrix() @ pivot
            pose = cls(q, t)
        return pose

    def matrix(self) -> np.ndarray:
        """Rotation matrix of the quaternion part."""
        w, x, y, z = self.rotation
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        single = points.ndim == 1
        pts = as_points(points.reshape(-1, 3), "points")
        out = pts @ self.matrix().T + self.translation
        return out[0] if single else out


def apply_pose(pose: RigidPose, points) -> np.ndarray:
    """Map points through the rigid transform; accepts one point or an (N, 3) array."""
    return pose.apply(points)


@dataclass(frozen=True)
class HandleConstraint:
    """Vertex group constrained to follow a single rigid transform.

    ``rest_positions`` must match the mesh rest vertices at ``indices``.
    """

    indices: np.ndarray
    rest_positions: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        if indices.size == 0:
            raise ValidationError("handle constraint needs at least one vertex")
        if indices.size != np.unique(indices).size:
            raise ValidationError("handle indices must be unique")
        rest = as_points(self.rest_positions, "rest_positions")
        if len(rest) != indices.size:
            raise ValidationError("rest_positions length must match indices")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "rest_positions", rest)

    @classmethod
    def from_mesh(cls, mesh: TetMesh, indices=None) -> "HandleConstraint":
        if indices is None:
            indices = mesh.handle_indices
        indices = np.asarray(indices, dtype=np.intp).reshape(-1)
        if indices.size and (indices.min() < 0 or indices.max() >= mesh.n_vertices):
            raise ValidationError("handle index out of range for mesh")
        return cls(indices, mesh.vertices[indices])

    def validate_against(self, mesh: TetMesh) -> None:
        if self.indices.size and self.indices.max() >= mesh.n_vertices:
            raise ValidationError("handle index out of range for mesh")
        if not np.array_equal(self.rest_positions, mesh.vertices[self.indices]):
            raise ValidationError("handle rest_positions do not match mesh rest vertices")

    def targets(self, pose: RigidPose) -> np.ndarray:
        """Constrained positions of the handle vertices under ``pose``."""
        return pose.apply(self.rest_positions)


def max_violation(positions: np.ndarray, handles: HandleConstraint, pose: RigidPose) -> float:
    """Largest distance between a handle vertex and its posed target (mm)."""
    delta = positions[handles.indices] - handles.targets(pose)
    return float(np.linalg.norm(delta, axis=1).max())
