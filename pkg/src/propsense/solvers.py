"""Minimization of the penalty-augmented deformation energy under a rigid handle.

Two solvers are provided:

* :func:`solve_newton`: projected-Newton iteration on the symmetric Dirichlet
  objective. Each step solves the PSD-projected Hessian system and backtracks
  with an Armijo condition; the step length is first capped at 0.9x the
  smallest positive root of ``det(A(alpha)) = 0`` over all elements, so no
  iterate ever contains an inverted element.
* :func:`solve_arap`: fixed-count local/global alternation on the ARAP energy.
  The global system matrix is constant and factored once per
  (mesh, handles, omega).

:func:`track_sequence` chains solves over a pose stream, warm-starting each
frame from the previous solution.
"""

import time
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import energy as en
from .errors import NumericalError, ValidationError
from .mesh import DeformState, TetMesh, check_state
from .rigid import HandleConstraint, RigidPose, max_violation

_ALPHA_MIN = 1e-12  # line search gives up below this step length


@dataclass(frozen=True)
class SolverConfig:
    """Shared solver knobs; ``arap_iters`` only affects the local/global solver."""

    omega: float = 1e5
    epsilon: float = 1e-4
    max_iters: int = 100
    line_search_shrink: float = 0.5
    armijo_c: float = 1e-4
    arap_iters: int = 10
    regularization: float = 1e-9

    def __post_init__(self):
        if not (self.omega > 0 and self.epsilon > 0 and self.max_iters >= 1):
            raise ValidationError("require omega > 0, epsilon > 0, max_iters >= 1")


@dataclass
class SolveReport:
    """Outcome of one solve; ``min_element_det`` covers every accepted iterate."""

    final_state: DeformState
    iterations: int
    final_gradient_norm: float
    final_energy: float
    constraint_violation: float
    wall_time: float
    min_element_det: float = float("inf")
    error: Optional[str] = None


def _dets(A: np.ndarray) -> np.ndarray:
    return np.linalg.det(A)


def _det_cubic_coeffs(A: np.ndarray, C: np.ndarray):
    """Coefficients of det(A + t*C) = d0 + d1*t + d2*t^2 + d3*t^3, per element."""
    a0, a1, a2 = A[:, :, 0], A[:, :, 1], A[:, :, 2]
    c0, c1, c2 = C[:, :, 0], C[:, :, 1], C[:, :, 2]
    x12 = np.cross(a1, a2)
    x20 = np.cross(a2, a0)
    x01 = np.cross(a0, a1)
    d0 = np.einsum("ti,ti->t", a0, x12)
    d1 = (x12 * c0).sum(1) + (x20 * c1).sum(1) + (x01 * c2).sum(1)
    y12 = np.cross(c1, c2)
    y20 = np.cross(c2, c0)
    y01 = np.cross(c0, c1)
    d2 = (y12 * a0).sum(1) + (y20 * a1).sum(1) + (y01 * a2).sum(1)
    d3 = np.einsum("ti,ti->t", c0, y12)
    return d0, d1, d2, d3


def _smallest_positive_roots(d0, d1, d2, d3) -> np.ndarray:
    """Smallest positive real root of each cubic, +inf where none exists."""
    m = len(d0)
    out = np.full(m, np.inf)
    scale = np.maximum.reduce([np.abs(d0), np.abs(d1), np.abs(d2), np.abs(d3)])
    scale[scale == 0.0] = 1.0
    tol = 1e-12 * scale

    cubic = np.abs(d3) > tol
    if cubic.any():
        b0 = d0[cubic] / d3[cubic]
        b1 = d1[cubic] / d3[cubic]
        b2 = d2[cubic] / d3[cubic]
        comp = np.zeros((cubic.sum(), 3, 3))
        comp[:, 1, 0] = 1.0
        comp[:, 2, 1] = 1.0
        comp[:, 0, 2] = -b0
        comp[:, 1, 2] = -b1
        comp[:, 2, 2] = -b2
        roots = np.linalg.eigvals(comp)
        real = np.abs(roots.imag) <= 1e-8 * np.maximum(1.0, np.abs(roots.real))
        positive = roots.real > 0.0
        cand = np.where(real & positive, roots.real, np.inf)
        out[cubic] = cand.min(axis=1)

    quad = (~cubic) & (np.abs(d2) > tol)
    if quad.any():
        a, b, c = d2[quad], d1[quad], d0[quad]
        disc = b * b - 4.0 * a * c
        has = disc >= 0.0
        sq = np.sqrt(np.maximum(disc, 0.0))
        r1 = (-b - sq) / (2.0 * a)
        r2 = (-b + sq) / (2.0 * a)
        cand = np.where(has[:, None] & (np.stack([r1, r2], 1) > 0.0), np.stack([r1, r2], 1), np.inf)
        out[quad] = cand.min(axis=1)

    lin = (~cubic) & (~quad) & (np.abs(d1) > tol)
    if lin.any():
        r = -d0[lin] / d1[lin]
        out[lin] = np.where(r > 0.0, r, np.inf)
    return out


def inversion_safe_step_limit(mesh: TetMesh, positions: np.ndarray, direction: np.ndarray, weights=None) -> float:
    """Largest step along ``direction`` before any element volume reaches zero."""
    if weights is None:
        weights = en.element_weights(mesh)
    A = en.deformation_gradients(mesh, positions, weights)
    C = en.deformation_gradients(mesh, direction, weights)
    roots = _smallest_positive_roots(*_det_cubic_coeffs(A, C))
    return float(roots.min()) if len(roots) else float("inf")


def _penalty(positions, handles, targets, omega) -> float:
    r = positions[handles.indices] - targets
    return float(omega * (r * r).sum())


class _NewtonLinearSolver:
    """Assembles and solves the projected-Hessian system with a fixed pattern.

    The sparsity pattern depends only on mesh topology and the handle set, so
    index mappings are computed once. Small-bandwidth meshes (after a
    reverse-Cuthill-McKee vertex ordering) use a banded Cholesky factorization;
    everything else falls back to a sparse LU.
    """

    _BANDED_FLOP_LIMIT = 2e8

    def __init__(self, mesh: TetMesh, handles: HandleConstraint, regularization: float):
        import scipy.sparse.csgraph as csgraph

        self.mesh = mesh
        self.regularization = regularization
        n = mesh.n_vertices
        ndof = 3 * n

        dof = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(mesh.n_tets, 12)
        rows = np.repeat(dof, 12, axis=1).ravel()
        cols = np.tile(dof, (1, 12)).ravel()
        handle_dof = (3 * handles.indices[:, None] + np.arange(3)).ravel()
        diag_dof = np.arange(ndof)
        self._rows = np.concatenate([rows, handle_dof, diag_dof])
        self._cols = np.concatenate([cols, handle_dof, diag_dof])
        self._n_handle = handle_dof.size
        self._ndof = ndof

        # vertex-level RCM ordering expanded to dofs
        vi = np.repeat(mesh.tets, 4, axis=1).ravel()
        vj = np.tile(mesh.tets, (1, 4)).ravel()
        vgraph = sp.coo_matrix((np.ones(vi.size), (vi, vj)), shape=(n, n)).tocsr()
        vperm = csgraph.reverse_cuthill_mckee(vgraph, symmetric_mode=True)
        perm = (3 * vperm.astype(np.intp)[:, None] + np.arange(3)).ravel()
        inv_perm = np.empty(ndof, dtype=np.intp)
        inv_perm[perm] = np.arange(ndof)
        pr = inv_perm[self._rows]
        pc = inv_perm[self._cols]
        bandwidth = int(np.abs(pr - pc).max()) if pr.size else 0

        if ndof * bandwidth ** 2 <= self._BANDED_FLOP_LIMIT:
            self.mode = "banded"
            self._perm = perm
            self._bandwidth = bandwidth
            keep = pr >= pc
            self._keep = keep
            self._flat_idx = (pr[keep] - pc[keep]) * ndof + pc[keep]
        else:
            self.mode = "splu"
            order = np.lexsort((self._rows, self._cols))
            sr = self._rows[order]
            sc = self._cols[order]
            new_entry = np.ones(len(order), dtype=bool)
            new_entry[1:] = (np.diff(sr) != 0) | (np.diff(sc) != 0)
            position = np.cumsum(new_entry) - 1
            self._data_pos = np.empty(len(order), dtype=np.intp)
            self._data_pos[order] = position
            self._nnz = int(position[-1]) + 1
            self._indices = sr[new_entry]
            self._indptr = np.searchsorted(sc[new_entry], np.arange(self._ndof + 1))

    def _raw_data(self, blocks: np.ndarray, omega: float) -> np.ndarray:
        return np.concatenate(
            [
                blocks.ravel(),
                np.full(self._n_handle, 2.0 * omega),
                np.full(self._ndof, self.regularization),
            ]
        )

    def solve(self, blocks: np.ndarray, omega: float, rhs: np.ndarray) -> np.ndarray:
        from scipy.linalg import cho_solve_banded, cholesky_banded

        data = self._raw_data(blocks, omega)
        if self.mode == "banded":
            ab = np.bincount(
                self._flat_idx, weights=data[self._keep], minlength=(self._bandwidth + 1) * self._ndof
            ).reshape(self._bandwidth + 1, self._ndof)
            try:
                cb = cholesky_banded(ab, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"projected Hessian factorization failed: {exc}") from exc
            out = np.empty_like(rhs)
            out[self._perm] = cho_solve_banded((cb, True), rhs[self._perm], check_finite=False)
            return out
        csc_data = np.bincount(self._data_pos, weights=data, minlength=self._nnz)
        H = sp.csc_matrix((csc_data, self._indices, self._indptr), shape=(self._ndof, self._ndof))
        try:
            lu = spla.splu(H, permc_spec="COLAMD")
            return lu.solve(rhs)
        except RuntimeError as exc:
            raise NumericalError(f"projected Hessian solve failed: {exc}") from exc


def _newton_linear_solver(mesh: TetMesh, handles: HandleConstraint, regularization: float) -> _NewtonLinearSolver:
    cache = en._mesh_cache(mesh)
    key = ("newton_linear", handles.indices.tobytes(), float(regularization))
    solver = cache.get(key)
    if solver is None:
        solver = _NewtonLinearSolver(mesh, handles, regularization)
        cache[key] = solver
    return solver


def solve_newton(
    mesh: TetMesh,
    model: en.EnergyModel,
    handles: HandleConstraint,
    pose: RigidPose,
    warm_start: Optional[DeformState] = None,
    cfg: SolverConfig = SolverConfig(),
) -> SolveReport:
    """Minimize the penalty-augmented symmetric Dirichlet energy for one pose.

    The penalty weight is taken from ``cfg.omega``; iteration stops once the
    gradient norm falls to ``cfg.epsilon`` or after ``cfg.max_iters`` accepted
    steps. Accepted iterations never increase the objective and never contain
    an inverted element.
    """
    if model.kind != en.SYMMETRIC_DIRICHLET:
        raise ValidationError("solve_newton requires the symmetric Dirichlet energy")
    model = replace(model, omega=cfg.omega)
    t0 = time.perf_counter()
    state = warm_start if warm_start is not None else DeformState.rest(mesh)
    x = check_state(mesh, state).copy()
    weights = en.element_weights(mesh)
    targets = handles.targets(pose)
    linear = _newton_linear_solver(mesh, handles, cfg.regularization)

    A = en.deformation_gradients(mesh, x, weights)
    min_det = float(_dets(A).min())
    if min_det <= 0.0:
        raise ValidationError("warm start contains inverted elements")
    energy, gradient, B = en._sd_state_eval(mesh, x, A, model, handles, targets)
    if not np.isfinite(energy):
        raise ValidationError("warm start has non-finite energy")
    volumes = mesh.rest_volume if model.volume_weighted else None

    iterations = 0
    gnorm = float(np.linalg.norm(gradient))
    for _ in range(cfg.max_iters):
        if gnorm <= cfg.epsilon:
            break
        blocks = en._projected_element_hessians_sd(mesh, B, volumes)
        dx = linear.solve(blocks, model.omega, -gradient)
        if not np.all(np.isfinite(dx)):
            raise NumericalError("projected Hessian solve produced non-finite step")
        direction = dx.reshape(-1, 3)

        C = en.deformation_gradients(mesh, direction, weights)
        limit = float(_smallest_positive_roots(*_det_cubic_coeffs(A, C)).min()) if mesh.n_tets else np.inf
        alpha = min(1.0, 0.9 * limit)
        slope = float(gradient @ dx)

        def line_energy(a: float) -> float:
            psi = en.element_energies(A + a * C, model)
            if model.volume_weighted:
                psi = psi * mesh.rest_volume
            return float(psi.sum()) + _penalty(x + a * direction, handles, targets, model.omega)

        accepted = False
        while alpha >= _ALPHA_MIN:
            e_new = line_energy(alpha)
            if np.isfinite(e_new) and e_new <= energy + cfg.armijo_c * alpha * slope:
                accepted = True
                break
            alpha *= cfg.line_search_shrink
        if not accepted:
            break  # stagnated; report the best point found

        x = x + alpha * direction
        A = A + alpha * C
        iterations += 1
        min_det = min(min_det, float(_dets(A).min()))
        energy, gradient, B = en._sd_state_eval(mesh, x, A, model, handles, targets)
        gnorm = float(np.linalg.norm(gradient))

    return SolveReport(
        final_state=DeformState(x),
        iterations=iterations,
        final_gradient_norm=gnorm,
        final_energy=energy,
        constraint_violation=max_violation(x, handles, pose),
        wall_time=time.perf_counter() - t0,
        min_element_det=min_det,
    )


class ArapGlobalSystem:
    """Prefactored global step of the ARAP local/global alternation.

    The system matrix depends only on the rest mesh, the handle set, and the
    penalty weight, so it is factored once and reused across iterations and
    frames.
    """

    def __init__(self, mesh: TetMesh, handles: HandleConstraint, omega: float):
        self.mesh = mesh
        self.handles = handles
        self.omega = float(omega)
        self.weights = en.element_weights(mesh)
        n = mesh.n_vertices
        wwt = np.einsum("tiq,tjq->tij", self.weights, self.weights)
        rows = np.repeat(mesh.tets, 4, axis=1).ravel()
        cols = np.tile(mesh.tets, (1, 4)).ravel()
        L = sp.coo_matrix((wwt.ravel(), (rows, cols)), shape=(n, n)).tocsc()
        diag = np.zeros(n)
        diag[handles.indices] = self.omega
        L = L + sp.diags(diag, format="csc")
        try:
            self._lu = spla.splu(L.tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise NumericalError(f"ARAP global system factorization failed: {exc}") from exc

    def solve(self, rotations: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """One global step: best positions for fixed per-element rotations."""
        rhs = np.zeros((self.mesh.n_vertices, 3))
        contrib = np.einsum("tiq,tpq->tip", self.weights, rotations)
        np.add.at(rhs, self.mesh.tets, contrib)
        rhs[self.handles.indices] += self.omega * targets
        out = self._lu.solve(rhs)
        if not np.all(np.isfinite(out)):
            raise NumericalError("ARAP global solve produced non-finite positions")
        return out


def solve_arap(
    mesh: TetMesh,
    handles: HandleConstraint,
    pose: RigidPose,
    warm_start: Optional[DeformState] = None,
    cfg: SolverConfig = SolverConfig(),
    system: Optional[ArapGlobalSystem] = None,
) -> SolveReport:
    """Run exactly ``cfg.arap_iters`` local/global alternations on the ARAP energy."""
    t0 = time.perf_counter()
    state = warm_start if warm_start is not None else DeformState.rest(mesh)
    x = check_state(mesh, state).copy()
    if system is None:
        system = ArapGlobalSystem(mesh, handles, cfg.omega)
    elif system.mesh is not mesh or system.omega != cfg.omega:
        raise ValidationError("cached ARAP system does not match this mesh/omega")
    targets = handles.targets(pose)

    min_det = float(_dets(en.deformation_gradients(mesh, x, system.weights)).min())
    for _ in range(cfg.arap_iters):
        A = en.deformation_gradients(mesh, x, system.weights)
        R = en.closest_rotations(A)
        x = system.solve(R, targets)
        min_det = min(min_det, float(_dets(en.deformation_gradients(mesh, x, system.weights)).min()))

    model = en.EnergyModel(kind=en.ARAP, omega=cfg.omega)
    ev = en.augmented_objective(mesh, x, model, handles, pose)
    return SolveReport(
        final_state=DeformState(x),
        iterations=cfg.arap_iters,
        final_gradient_norm=float(np.linalg.norm(ev.gradient)),
        final_energy=ev.energy,
        constraint_violation=max_violation(x, handles, pose),
        wall_time=time.perf_counter() - t0,
        min_element_det=min_det,
    )


def track_sequence(
    mesh: TetMesh,
    model: en.EnergyModel,
    handles: HandleConstraint,
    poses: Iterable[RigidPose],
    cfg: SolverConfig = SolverConfig(),
) -> Iterator[SolveReport]:
    """Solve a temporally ordered pose stream, warm-starting from the last frame.

    Per-frame failures are reported in-stream on the yielded record (``error``
    set, state carried over) without aborting the sequence.
    """
    state = DeformState.rest(mesh)
    arap_system = None
    if model.kind == en.ARAP:
        arap_system = ArapGlobalSystem(mesh, handles, cfg.omega)
    for pose in poses:
        try:
            if model.kind == en.ARAP:
                report = solve_arap(mesh, handles, pose, warm_start=state, cfg=cfg, system=arap_system)
            else:
                report = solve_newton(mesh, model, handles, pose, warm_start=state, cfg=cfg)
            state = report.final_state
        except (NumericalError, ValidationError) as exc:
            report = SolveReport(
                final_state=state,
                iterations=0,
                final_gradient_norm=float("nan"),
                final_energy=float("nan"),
                constraint_violation=max_violation(state.positions, handles, pose),
                wall_time=0.0,
                error=str(exc),
            )
        yield report
