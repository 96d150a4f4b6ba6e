"""Tetrahedral mesh representation, rest-state precomputation, and barycentric embedding.

Coordinates are millimeters throughout. A mesh is immutable after construction
and safe for concurrent reads; deformed configurations live in separate
:class:`DeformState` values.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError, ValidationError
from .validation import as_index_array, as_points, as_vector3

DEGENERATE_VOLUME = 1e-9  # mm^3; smaller tets are rejected at load


def _shape_matrices(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Edge matrices [v1-v0, v2-v0, v3-v0] as columns, one 3x3 per tet."""
    corners = vertices[tets]  # (m, 4, 3)
    return (corners[:, 1:, :] - corners[:, :1, :]).transpose(0, 2, 1)


@dataclass(frozen=True)
class TetMesh:
    """Rest-state tetrahedral discretization with per-element precomputation.

    Attributes
    ----------
    vertices : (n, 3) float array, rest positions in mm
    tets : (m, 4) int array, vertex indices with positive orientation
    rest_dm_inv : (m, 3, 3) inverse rest edge matrices
    rest_volume : (m,) signed rest volumes, all positive after load
    handle_indices : vertex indices driven as one rigid handle group
    contact_indices : boundary vertex indices used as contact interface points
    """

    vertices: np.ndarray
    tets: np.ndarray
    rest_dm_inv: np.ndarray
    rest_volume: np.ndarray
    handle_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    contact_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))

    @classmethod
    def from_arrays(cls, vertices, tets, handle_indices=(), contact_indices=()) -> "TetMesh":
        """Validate, repair orientation, and precompute rest-state quantities.

        Tets with negative volume get their last two indices swapped; tets with
        |volume| below ``DEGENERATE_VOLUME`` are rejected with their id.
        """
        vertices = as_points(vertices, "vertices")
        tets = np.asarray(tets, dtype=np.intp)
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshError(f"tets: expected an (m, 4) array, got shape {tets.shape}")
        n = len(vertices)
        if tets.size and (tets.min() < 0 or tets.max() >= n):
            bad = int(np.argwhere((tets < 0) | (tets >= n))[0][0])
            raise MeshError(f"tet {bad}: vertex index out of range [0, {n})")
        for t, tet in enumerate(tets):
            if len(set(tet.tolist())) != 4:
                raise MeshError(f"tet {t}: repeated vertex index")

        tets = tets.copy()
        vol = np.linalg.det(_shape_matrices(vertices, tets)) / 6.0
        flipped = vol < 0
        if flipped.any():
            tets[flipped, 2:] = tets[flipped, 3:1:-1]
            vol = np.linalg.det(_shape_matrices(vertices, tets)) / 6.0
        degenerate = np.abs(vol) < DEGENERATE_VOLUME
        if degenerate.any():
            bad = int(np.argwhere(degenerate)[0][0])
            raise MeshError(f"tet {bad}: degenerate (|volume| = {abs(vol[bad]):.3e} mm^3)")

        dm_inv = np.linalg.inv(_shape_matrices(vertices, tets))
        handle_indices = as_index_array(handle_indices, n, "handle_indices", unique=True)
        contact_indices = as_index_array(contact_indices, n, "contact_indices", unique=True)
        return cls(vertices, tets, dm_inv, vol, handle_indices, contact_indices)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def bounding_box_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def tet_centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)


def load_mesh(path) -> "TetMesh":
    """Load a mesh from the JSON interchange format (see :mod:`propsense.formats`)."""
    from .formats import parse_mesh

    return parse_mesh(path)


@dataclass(frozen=True)
class DeformState:
    """Deformed vertex positions, one row per mesh vertex (mm)."""

    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", as_points(self.positions, "positions"))

    @classmethod
    def rest(cls, mesh: TetMesh) -> "DeformState":
        return cls(mesh.vertices.copy())


def check_state(mesh: TetMesh, state: DeformState) -> np.ndarray:
    if len(state.positions) != mesh.n_vertices:
        raise ValidationError(
            f"state has {len(state.positions)} positions for a mesh with {mesh.n_vertices} vertices"
        )
    return state.positions


@dataclass(frozen=True)
class BarycentricCoords:
    """Four affine weights over a tetrahedron's vertices; they sum to 1."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        if lam.shape != (4,):
            raise ValidationError(f"barycentric coords must have 4 components, got {lam.shape}")
        if abs(lam.sum() - 1.0) > 1e-10:
            raise ValidationError(f"barycentric coords sum to {lam.sum()!r}, not 1")
        object.__setattr__(self, "lam", lam)


def barycentric_coords(mesh: TetMesh, tet: int, point) -> BarycentricCoords:
    """Affine weights of ``point`` in tet ``tet`` (negative outside; sum is exactly 1)."""
    point = as_vector3(point, "point")
    if not 0 <= tet < mesh.n_tets:
        raise ValidationError(f"tet index {tet} out of range [0, {mesh.n_tets})")
    rest = mesh.vertices[mesh.tets[tet]]
    lam_123 = mesh.rest_dm_inv[tet] @ (point - rest[0])
    lam = np.empty(4)
    lam[1:] = lam_123
    lam[0] = 1.0 - lam_123.sum()
    return BarycentricCoords(lam)


def interpolate(state: DeformState, mesh: TetMesh, tet: int, bc: BarycentricCoords) -> np.ndarray:
    """Weighted combination of the tet's deformed vertex positions."""
    positions = check_state(mesh, state)
    if not 0 <= tet < mesh.n_tets:
        raise ValidationError(f"tet index {tet} out of range [0, {mesh.n_tets})")
    return bc.lam @ positions[mesh.tets[tet]]


def _barycentric_all_tets(mesh: TetMesh, point: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of one point relative to every tet, (m, 4)."""
    rel = point[None, :] - mesh.vertices[mesh.tets[:, 0]]
    lam_123 = np.einsum("tij,tj->ti", mesh.rest_dm_inv, rel)
    lam = np.empty((mesh.n_tets, 4))
    lam[:, 1:] = lam_123
    lam[:, 0] = 1.0 - lam_123.sum(axis=1)
    return lam


def nearest_tet(mesh: TetMesh, point) -> int:
    """Tet containing the point if any, else the one with the closest centroid.

    Containment allows a -1e-9 slack on the weights; ties resolve to the lowest
    tet index.
    """
    if mesh.n_tets == 0:
        raise ValidationError("mesh has no tets")
    point = as_vector3(point, "point")
    lam = _barycentric_all_tets(mesh, point)
    inside = np.flatnonzero(lam.min(axis=1) >= -1e-9)
    if inside.size:
        return int(inside[0])
    dist = np.linalg.norm(mesh.tet_centroids() - point[None, :], axis=1)
    return int(np.argmin(dist))


# Faces of a positively oriented tet, wound so the rest normal points outward.
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def boundary_faces(mesh: TetMesh):
    """Faces that belong to exactly one tet, wound outward in the rest state.

    Returns ``(faces, normals)`` where ``faces`` is (F, 3) vertex indices and
    ``normals`` the unit rest normals pointing away from the owning tet.
    """
    all_faces = mesh.tets[:, _TET_FACES].reshape(-1, 3)
    keys = np.sort(all_faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    faces = all_faces[counts[inverse] == 1]

    v = mesh.vertices
    raw = np.cross(v[faces[:, 1]] - v[faces[:, 0]], v[faces[:, 2]] - v[faces[:, 0]])
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    return faces, raw / norms


def boundary_vertex_set(mesh: TetMesh) -> np.ndarray:
    faces, _ = boundary_faces(mesh)
    return np.unique(faces)
