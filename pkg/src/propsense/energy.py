"""Per-element deformation gradients, distortion energies, and analytic derivatives.

Two element energies are supported on the deformation gradient ``A`` of each tet:

* ``"symmetric_dirichlet"``: ``|A|_F^2 + |A^-1|_F^2``, an isometric distortion
  measure whose minimum value is 6 per element, attained exactly at rotations.
  Inverted or degenerate elements (``det A <= 0``) evaluate to ``+inf`` so that
  line searches treat inversion as a barrier.
* ``"arap"``: ``|A - R(A)|_F^2`` with ``R(A)`` the closest rotation, zero exactly
  at rotations.

The penalty-augmented objective adds ``omega * sum_h |x_h - target_h|^2`` over a
rigid handle group. Gradients are analytic; the Hessian is assembled from
per-element 12x12 blocks, each eigen-clamped to be positive semidefinite, plus
exact ``2*omega*I`` blocks on the handle vertices.

All element quantities are vectorized; reductions are plain float64 sums and
independent of evaluation order to roundoff. Mesh-derived constants (element
weight matrices, assembly index patterns) are cached on the mesh object.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .mesh import DeformState, TetMesh, check_state
from .rigid import HandleConstraint, RigidPose

SYMMETRIC_DIRICHLET = "symmetric_dirichlet"
ARAP = "arap"

#: Energy of one undistorted element under the symmetric Dirichlet measure.
REST_ENERGY_PER_TET = 6.0

_EIG_CLAMP = 1e-8  # floor applied to element Hessian eigenvalues

# vec(M^T) = K vec(M) for column-major vec; stored as a column permutation.
_KPERM = np.array([3 * (i % 3) + i // 3 for i in range(9)])


@dataclass(frozen=True)
class EnergyModel:
    """Element energy choice plus the penalty weight for handle constraints."""

    kind: str = SYMMETRIC_DIRICHLET
    omega: float = 1e5
    volume_weighted: bool = False

    def __post_init__(self):
        if self.kind not in (SYMMETRIC_DIRICHLET, ARAP):
            raise ValidationError(f"unknown energy kind {self.kind!r}")
        if not self.omega > 0:
            raise ValidationError("omega must be positive")


@dataclass
class ObjectiveEval:
    """Energy with optional analytic gradient (3n,) and sparse Hessian (3n, 3n)."""

    energy: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[sp.csc_matrix] = None


def _mesh_cache(mesh: TetMesh) -> dict:
    cache = getattr(mesh, "_derived_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(mesh, "_derived_cache", cache)
    return cache


def element_weights(mesh: TetMesh) -> np.ndarray:
    """Per-tet (4, 3) matrices W with A = X_loc^T W for local vertex block X_loc."""
    cache = _mesh_cache(mesh)
    w = cache.get("weights")
    if w is None:
        w = np.empty((mesh.n_tets, 4, 3))
        w[:, 1:, :] = mesh.rest_dm_inv
        w[:, 0, :] = -mesh.rest_dm_inv.sum(axis=1)
        cache["weights"] = w
    return w


def _chain_matrices(mesh: TetMesh) -> np.ndarray:
    """J with vec(A) = J x_loc (column-major vec), (m, 9, 12), cached."""
    cache = _mesh_cache(mesh)
    j = cache.get("chain")
    if j is None:
        w = element_weights(mesh)
        j5 = np.zeros((mesh.n_tets, 3, 3, 4, 3))
        wt = w.transpose(0, 2, 1)  # (m, 3, 4)
        for p in range(3):
            j5[:, :, p, :, p] = wt
        j = j5.reshape(mesh.n_tets, 9, 12)
        cache["chain"] = j
    return j


def _assembly_pattern(mesh: TetMesh):
    cache = _mesh_cache(mesh)
    pattern = cache.get("assembly")
    if pattern is None:
        dof = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(mesh.n_tets, 12)
        rows = np.repeat(dof, 12, axis=1).ravel()
        cols = np.tile(dof, (1, 12)).ravel()
        pattern = (rows, cols)
        cache["assembly"] = pattern
    return pattern


def deformation_gradients(mesh: TetMesh, positions: np.ndarray, weights=None) -> np.ndarray:
    """Deformation gradient of every tet, (m, 3, 3)."""
    if weights is None:
        weights = element_weights(mesh)
    return np.matmul(positions[mesh.tets].transpose(0, 2, 1), weights)


def deformation_gradient(mesh: TetMesh, state: DeformState, tet: int) -> np.ndarray:
    """Deformation gradient of a single tet."""
    positions = check_state(mesh, state)
    if not 0 <= tet < mesh.n_tets:
        raise ValidationError(f"tet index {tet} out of range [0, {mesh.n_tets})")
    corners = positions[mesh.tets[tet]]
    ds = (corners[1:] - corners[0]).T
    return ds @ mesh.rest_dm_inv[tet]


def closest_rotations(A: np.ndarray) -> np.ndarray:
    """Closest rotations (Frobenius sense) to a batch of (..., 3, 3) matrices.

    Uses the sign-corrected SVD so the result always has determinant +1; on
    rank-deficient input the tie follows the SVD's descending singular value
    order.
    """
    u, _, vt = np.linalg.svd(A)
    det = np.linalg.det(u @ vt)
    u = u.copy()
    u[..., :, 2] *= np.sign(det)[..., None]
    return u @ vt


def closest_rotation(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (3, 3):
        raise ValidationError(f"expected a 3x3 matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValidationError("matrix contains non-finite values")
    return closest_rotations(A[None])[0]


def psi_element(A, model: EnergyModel) -> float:
    """Element energy of one deformation gradient; +inf on inversion for the
    symmetric Dirichlet kind."""
    A = np.asarray(A, dtype=np.float64)
    if model.kind == SYMMETRIC_DIRICHLET:
        if np.linalg.det(A) <= 0.0:
            return float("inf")
        B = np.linalg.inv(A)
        return float((A * A).sum() + (B * B).sum())
    R = closest_rotation(A)
    d = A - R
    return float((d * d).sum())


def element_energies(A: np.ndarray, model: EnergyModel) -> np.ndarray:
    """Vectorized ``psi_element`` over (m, 3, 3); inverted SD elements give +inf."""
    if model.kind == SYMMETRIC_DIRICHLET:
        det = np.linalg.det(A)
        out = np.full(len(A), np.inf)
        ok = det > 0.0
        if ok.any():
            B = np.linalg.inv(A[ok])
            out[ok] = (A[ok] ** 2).sum(axis=(1, 2)) + (B ** 2).sum(axis=(1, 2))
        return out
    d = A - closest_rotations(A)
    return (d ** 2).sum(axis=(1, 2))


def total_energy(mesh: TetMesh, state, model: EnergyModel) -> float:
    """Sum of element energies over the mesh (volume-weighted only if enabled)."""
    positions = state.positions if isinstance(state, DeformState) else np.asarray(state, float)
    psi = element_energies(deformation_gradients(mesh, positions), model)
    if model.volume_weighted:
        psi = psi * mesh.rest_volume
    return float(psi.sum())


def _sd_energies_and_stress(A: np.ndarray):
    """(psi, P, B) for the symmetric Dirichlet energy; psi is +inf on inversion
    and the corresponding stress rows are unusable."""
    det = np.linalg.det(A)
    if np.any(det <= 0.0):
        psi = np.full(len(A), np.inf)
        ok = det > 0.0
        if ok.any():
            B_ok = np.linalg.inv(A[ok])
            psi[ok] = (A[ok] ** 2).sum(axis=(1, 2)) + (B_ok ** 2).sum(axis=(1, 2))
        return psi, None, None
    B = np.linalg.inv(A)
    Bt = B.transpose(0, 2, 1)
    psi = (A ** 2).sum(axis=(1, 2)) + (B ** 2).sum(axis=(1, 2))
    P = 2.0 * A - 2.0 * (Bt @ B @ Bt)
    return psi, P, B


def _arap_energies_and_stress(A: np.ndarray):
    d = A - closest_rotations(A)
    return (d ** 2).sum(axis=(1, 2)), 2.0 * d


def _kron33(M: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Batched Kronecker product of (m, 3, 3) pairs, returning (m, 9, 9)."""
    return (M[:, :, None, :, None] * N[:, None, :, None, :]).reshape(len(M), 9, 9)


def _sd_hessian9(B: np.ndarray) -> np.ndarray:
    """d^2(psi_SD)/dA^2 as (m, 9, 9) in column-major vec convention."""
    Bt = B.transpose(0, 2, 1)
    BBt = B @ Bt
    BtB = Bt @ B
    H = 2.0 * _kron33(BBt, BtB)
    idx = np.arange(9)
    H[:, idx, idx] += 2.0
    T = _kron33(BBt @ B, Bt)
    T += _kron33(B, BtB @ Bt)
    H += 2.0 * T[:, :, _KPERM]
    return H


def _element_hessians_sd(mesh: TetMesh, B: np.ndarray, volumes=None) -> np.ndarray:
    """Per-element 12x12 Hessian blocks of the symmetric Dirichlet energy."""
    H9 = _sd_hessian9(B)
    if volumes is not None:
        H9 *= volumes[:, None, None]
    J = _chain_matrices(mesh)
    return J.transpose(0, 2, 1) @ H9 @ J


def project_psd(blocks: np.ndarray, floor: float = _EIG_CLAMP) -> np.ndarray:
    """Clamp each symmetric block's eigenvalues from below, making it PSD."""
    w, v = np.linalg.eigh(blocks)
    w = np.maximum(w, floor)
    return (v * w[:, None, :]) @ v.transpose(0, 2, 1)


def _chain_svd(mesh: TetMesh):
    """Cached thin SVD pieces of the chain matrices: S = U diag(s) and V.

    The 12x12 element Hessian J^T H9 J has rank 9 with nullspace null(J), so
    its eigen-clamp can be computed from the 9x9 matrix S^T H9 S: the nonzero
    eigenvalues agree and the nullspace clamps to the floor exactly.
    """
    cache = _mesh_cache(mesh)
    pieces = cache.get("chain_svd")
    if pieces is None:
        J = _chain_matrices(mesh)
        u, s, vt = np.linalg.svd(J, full_matrices=False)
        pieces = (u * s[:, None, :], vt.transpose(0, 2, 1))  # (m,9,9), (m,12,9)
        cache["chain_svd"] = pieces
    return pieces


def _projected_element_hessians_sd(mesh: TetMesh, B: np.ndarray, volumes=None, floor: float = _EIG_CLAMP) -> np.ndarray:
    """PSD-projected 12x12 blocks via the rank-9 reduction (identical to
    eigen-clamping the full blocks, up to roundoff)."""
    H9 = _sd_hessian9(B)
    if volumes is not None:
        H9 *= volumes[:, None, None]
    S, V = _chain_svd(mesh)
    M = S.transpose(0, 2, 1) @ H9 @ S
    w, q = np.linalg.eigh(M)
    w = np.maximum(w, floor) - floor
    G = V @ q  # (m, 12, 9), orthonormal columns spanning range(J^T)
    out = (G * w[:, None, :]) @ G.transpose(0, 2, 1)
    idx = np.arange(12)
    out[:, idx, idx] += floor
    return out


def _scatter_gradient(mesh: TetMesh, grad_elem: np.ndarray) -> np.ndarray:
    """Accumulate per-element (m, 4, 3) vertex gradients into a (3n,) vector."""
    out = np.zeros((mesh.n_vertices, 3))
    np.add.at(out, mesh.tets, grad_elem)
    return out.ravel()


def assemble_hessian(mesh: TetMesh, blocks: np.ndarray, handle_indices, omega: float) -> sp.csc_matrix:
    """Global sparse Hessian from element blocks plus 2*omega*I on handle dofs."""
    ndof = 3 * mesh.n_vertices
    rows, cols = _assembly_pattern(mesh)
    handle_dof = (3 * np.asarray(handle_indices, dtype=np.intp)[:, None] + np.arange(3)).ravel()
    all_rows = np.concatenate([rows, handle_dof])
    all_cols = np.concatenate([cols, handle_dof])
    data = np.concatenate([blocks.ravel(), np.full(handle_dof.size, 2.0 * omega)])
    return sp.coo_matrix((data, (all_rows, all_cols)), shape=(ndof, ndof)).tocsc()


def augmented_objective(
    mesh: TetMesh,
    state,
    model: EnergyModel,
    handles: HandleConstraint,
    pose: RigidPose,
    with_hessian: bool = False,
    project: bool = True,
) -> ObjectiveEval:
    """Penalty-augmented energy with analytic gradient and optional Hessian.

    The Hessian (symmetric Dirichlet only) is returned PSD-projected unless
    ``project=False``, which is intended for derivative checks. At an energy
    sentinel (+inf) the gradient and Hessian are undefined and set to None.
    """
    positions = state.positions if isinstance(state, DeformState) else np.asarray(state, float)
    if positions.shape != (mesh.n_vertices, 3):
        raise ValidationError("state does not match mesh vertex count")
    A = deformation_gradients(mesh, positions)
    targets = handles.targets(pose)
    return _objective_from_gradients(
        mesh, positions, A, model, handles, targets, with_hessian=with_hessian, project=project
    )


def _sd_state_eval(mesh, positions, A, model, handles, targets):
    """(energy, gradient, B) for the solver hot path; gradient and B are None
    at the +inf sentinel."""
    volumes = mesh.rest_volume if model.volume_weighted else None
    psi, P, B = _sd_energies_and_stress(A)
    if volumes is not None:
        psi = psi * volumes
    residual = positions[handles.indices] - targets
    energy = float(psi.sum() + model.omega * (residual ** 2).sum())
    if not np.isfinite(energy):
        return energy, None, None
    if volumes is not None:
        P = P * volumes[:, None, None]
    grad_elem = np.matmul(element_weights(mesh), P.transpose(0, 2, 1))
    gradient = _scatter_gradient(mesh, grad_elem)
    np.add.at(gradient.reshape(-1, 3), handles.indices, 2.0 * model.omega * residual)
    return energy, gradient, B


def _objective_from_gradients(
    mesh: TetMesh,
    positions: np.ndarray,
    A: np.ndarray,
    model: EnergyModel,
    handles: HandleConstraint,
    targets: np.ndarray,
    with_hessian: bool = False,
    project: bool = True,
) -> ObjectiveEval:
    """Objective pieces from precomputed deformation gradients."""
    weights = element_weights(mesh)
    volumes = mesh.rest_volume if model.volume_weighted else None
    if model.kind == SYMMETRIC_DIRICHLET:
        psi, P, B = _sd_energies_and_stress(A)
    else:
        psi, P = _arap_energies_and_stress(A)
        B = None
    if volumes is not None:
        psi = psi * volumes

    residual = positions[handles.indices] - targets
    energy = float(psi.sum() + model.omega * (residual ** 2).sum())
    if not np.isfinite(energy):
        return ObjectiveEval(energy=energy)

    if volumes is not None:
        P = P * volumes[:, None, None]
    # gradient of psi wrt vertex i of each tet is P @ W_i
    grad_elem = np.matmul(weights, P.transpose(0, 2, 1))
    gradient = _scatter_gradient(mesh, grad_elem)
    np.add.at(gradient.reshape(-1, 3), handles.indices, 2.0 * model.omega * residual)

    hessian = None
    if with_hessian:
        if model.kind != SYMMETRIC_DIRICHLET:
            raise ValidationError(
                "analytic Hessian is only defined for the symmetric Dirichlet energy; "
                "use the local/global solver for ARAP"
            )
        if project:
            blocks = _projected_element_hessians_sd(mesh, B, volumes)
        else:
            blocks = _element_hessians_sd(mesh, B, volumes)
        hessian = assemble_hessian(mesh, blocks, handles.indices, model.omega)
    return ObjectiveEval(energy=energy, gradient=gradient, hessian=hessian)
