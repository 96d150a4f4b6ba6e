"""Brute-force gradient-descent reference minimizer for small meshes.

This is the stand-in ground truth where no analytic optimum exists: plain
descent with a tiny adaptive step, run for up to a million steps on the same
penalty-augmented objective the Newton solver minimizes. The objective and its
gradient are re-derived here in scalar loops (JIT-compiled) independent of the
vectorized production code, so agreement between the two is meaningful.

Only practical for meshes up to around 100 elements.
"""

from typing import Optional, Tuple

import numba
import numpy as np

from .errors import ValidationError
from .mesh import DeformState, TetMesh, check_state
from .rigid import HandleConstraint, RigidPose


@numba.njit(cache=True)
def _objective_and_grad(x, tets, dminv, handle_idx, targets, omega):  # pragma: no cover
    n = x.shape[0]
    m = tets.shape[0]
    grad = np.zeros((n, 3))
    energy = 0.0
    for t in range(m):
        i0 = tets[t, 0]
        i1 = tets[t, 1]
        i2 = tets[t, 2]
        i3 = tets[t, 3]
        # Ds = [x1-x0 | x2-x0 | x3-x0], A = Ds @ Bm
        d = np.empty((3, 3))
        for r in range(3):
            d[r, 0] = x[i1, r] - x[i0, r]
            d[r, 1] = x[i2, r] - x[i0, r]
            d[r, 2] = x[i3, r] - x[i0, r]
        bm = dminv[t]
        a = np.empty((3, 3))
        for r in range(3):
            for c in range(3):
                a[r, c] = d[r, 0] * bm[0, c] + d[r, 1] * bm[1, c] + d[r, 2] * bm[2, c]
        det = (
            a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
            - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
            + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
        )
        if det <= 0.0:
            return np.inf, grad
        # b = inv(a) via the adjugate
        b = np.empty((3, 3))
        b[0, 0] = (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]) / det
        b[0, 1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) / det
        b[0, 2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) / det
        b[1, 0] = (a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]) / det
        b[1, 1] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) / det
        b[1, 2] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) / det
        b[2, 0] = (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]) / det
        b[2, 1] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) / det
        b[2, 2] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) / det
        for r in range(3):
            for c in range(3):
                energy += a[r, c] * a[r, c] + b[r, c] * b[r, c]
        # stress P = 2A - 2 B^T B B^T
        bbt = np.empty((3, 3))  # B^T B
        for r in range(3):
            for c in range(3):
                bbt[r, c] = b[0, r] * b[0, c] + b[1, r] * b[1, c] + b[2, r] * b[2, c]
        p = np.empty((3, 3))
        for r in range(3):
            for c in range(3):
                s = bbt[r, 0] * b[c, 0] + bbt[r, 1] * b[c, 1] + bbt[r, 2] * b[c, 2]
                p[r, c] = 2.0 * a[r, c] - 2.0 * s
        # chain rule: grad_i = P @ Bm[i-1, :] for i in 1..3, grad_0 = -sum
        for k in range(3):
            idx = tets[t, k + 1]
            for r in range(3):
                g = p[r, 0] * bm[k, 0] + p[r, 1] * bm[k, 1] + p[r, 2] * bm[k, 2]
                grad[idx, r] += g
                grad[i0, r] -= g
    for h in range(handle_idx.shape[0]):
        idx = handle_idx[h]
        for r in range(3):
            resid = x[idx, r] - targets[h, r]
            energy += omega * resid * resid
            grad[idx, r] += 2.0 * omega * resid
    return energy, grad


@numba.njit(cache=True)
def _descend(x0, tets, dminv, handle_idx, targets, omega, max_steps, grad_tol):  # pragma: no cover
    x = x0.copy()
    energy, grad = _objective_and_grad(x, tets, dminv, handle_idx, targets, omega)
    step = 0.1 / omega
    step_max = 0.9 / omega
    steps = 0
    gnorm = 0.0
    while steps < max_steps:
        gnorm = np.sqrt((grad * grad).sum())
        if gnorm <= grad_tol:
            break
        candidate = x - step * grad
        e_new, g_new = _objective_and_grad(candidate, tets, dminv, handle_idx, targets, omega)
        steps += 1
        if e_new < energy:
            x = candidate
            energy = e_new
            grad = g_new
            step = min(step * 1.05, step_max)
        else:
            step *= 0.5
            if step < 1e-18:
                break
    return x, energy, gnorm, steps


def descent_reference(
    mesh: TetMesh,
    handles: HandleConstraint,
    pose: RigidPose,
    omega: float = 1e5,
    max_steps: int = 1_000_000,
    grad_tol: float = 1e-6,
    warm_start: Optional[DeformState] = None,
) -> Tuple[DeformState, dict]:
    """Reference minimizer of the penalty-augmented symmetric Dirichlet energy.

    Returns the final state and a stats dict (energy, gradient norm, steps).
    """
    if mesh.n_tets > 120:
        raise ValidationError("descent reference is restricted to small meshes (<= 120 tets)")
    state = warm_start if warm_start is not None else DeformState.rest(mesh)
    x0 = check_state(mesh, state).astype(np.float64)
    targets = handles.targets(pose)
    x, energy, gnorm, steps = _descend(
        x0,
        mesh.tets.astype(np.int64),
        mesh.rest_dm_inv,
        handles.indices.astype(np.int64),
        targets,
        float(omega),
        int(max_steps),
        float(grad_tol),
    )
    if not np.isfinite(energy):
        raise ValidationError("descent reference left the non-inverted region")
    return DeformState(x), {"energy": float(energy), "gradient_norm": float(gnorm), "steps": int(steps)}
