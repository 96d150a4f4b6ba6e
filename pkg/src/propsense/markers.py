"""Marker embedding, contact-point extraction, and prediction error statistics.

An observable point (a tracked marker, or a probe's contact location) is pinned
to its nearest tet by barycentric weights computed once against the rest shape;
the weights stay constant under the rigid-attachment assumption, so deformed
predictions are plain barycentric interpolation of the solved vertex positions.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .mesh import (
    BarycentricCoords,
    DeformState,
    TetMesh,
    barycentric_coords,
    boundary_faces,
    check_state,
    interpolate,
    nearest_tet,
)
from .validation import as_points, as_vector3


@dataclass(frozen=True)
class MarkerAttachment:
    """A point pinned to one tet by constant barycentric weights."""

    tet: int
    bc: BarycentricCoords


def calibrate_marker(mesh: TetMesh, rest_point) -> MarkerAttachment:
    """Attach a rest-frame point to its nearest tet.

    Points outside the mesh (markers on rigid stalks) are allowed and produce
    extrapolated, possibly negative weights; the round trip through
    :func:`predict_markers` at rest is still exact. Points farther than one
    bounding-box diagonal from the mesh are rejected as miscalibrated.
    """
    rest_point = as_vector3(rest_point, "rest_point")
    gap = np.linalg.norm(mesh.vertices - rest_point[None, :], axis=1).min()
    if gap > mesh.bounding_box_diagonal():
        raise ValidationError(
            f"rest point is {gap:.1f} mm from the mesh, beyond one bounding-box diagonal"
        )
    tet = nearest_tet(mesh, rest_point)
    return MarkerAttachment(tet=tet, bc=barycentric_coords(mesh, tet, rest_point))


def calibrate_markers(mesh: TetMesh, rest_points) -> list:
    return [calibrate_marker(mesh, p) for p in as_points(rest_points, "rest_points")]


def predict_markers(state: DeformState, mesh: TetMesh, attachments: Sequence[MarkerAttachment]) -> np.ndarray:
    """Deformed marker positions, (k, 3)."""
    if not attachments:
        return np.empty((0, 3))
    return np.stack([interpolate(state, mesh, a.tet, a.bc) for a in attachments])


def extract_contact_points(state: DeformState, mesh: TetMesh, contact_indices=None):
    """Deformed contact-node positions with outward unit normals.

    Each node's normal is the area-weighted average of its adjacent deformed
    boundary faces (the raw face cross products already carry the area weight).
    Indices not on the mesh boundary are rejected.
    """
    positions = check_state(mesh, state)
    if contact_indices is None:
        contact_indices = mesh.contact_indices
    contact_indices = np.asarray(contact_indices, dtype=np.intp).reshape(-1)
    faces, _ = boundary_faces(mesh)
    on_boundary = np.isin(contact_indices, faces)
    if not on_boundary.all():
        bad = int(contact_indices[~on_boundary][0])
        raise ValidationError(f"contact index {bad} is not a boundary vertex")

    area_vectors = np.cross(
        positions[faces[:, 1]] - positions[faces[:, 0]],
        positions[faces[:, 2]] - positions[faces[:, 0]],
    )
    accum = np.zeros((mesh.n_vertices, 3))
    for corner in range(3):
        np.add.at(accum, faces[:, corner], area_vectors)
    normals = accum[contact_indices]
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    if np.any(lengths == 0.0):
        raise ValidationError("degenerate contact normal (zero adjacent area)")
    return positions[contact_indices], normals / lengths


@dataclass(frozen=True)
class ErrorStats:
    """Signed per-axis errors (convention: predicted - truth) and norm summary."""

    per_axis: np.ndarray  # (3, k)
    norms: np.ndarray  # (k,)
    median_norm: float
    mean_norm: float


def error_stats(predicted, truth) -> ErrorStats:
    predicted = as_points(predicted, "predicted")
    truth = as_points(truth, "truth")
    if len(predicted) != len(truth):
        raise ValidationError(
            f"length mismatch: {len(predicted)} predicted vs {len(truth)} truth points"
        )
    delta = predicted - truth
    norms = np.linalg.norm(delta, axis=1)
    return ErrorStats(
        per_axis=delta.T.copy(),
        norms=norms,
        median_norm=float(np.median(norms)) if len(norms) else 0.0,
        mean_norm=float(norms.mean()) if len(norms) else 0.0,
    )
