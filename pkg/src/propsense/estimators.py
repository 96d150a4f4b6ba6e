"""Estimator-style facade so the solvers compose with sklearn tooling."""

from typing import List, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator

from . import energy as en
from .errors import ValidationError
from .formats import PoseFrame
from .mesh import TetMesh
from .rigid import HandleConstraint, RigidPose
from .solvers import SolveReport, SolverConfig, track_sequence


class DeformationEstimator(BaseEstimator):
    """Pose-driven soft-body deformation as a fit/predict estimator.

    ``fit`` binds a tetrahedral mesh (its handle group becomes the rigid
    constraint); ``predict`` maps a sequence of rigid poses to deformed vertex
    positions, warm-starting each frame from the previous one. Per-frame solve
    reports are kept on ``reports_``.

    Parameters mirror the solver configuration; ``energy`` selects between the
    projected-Newton solver ("symmetric_dirichlet") and the local/global
    baseline ("arap").
    """

    def __init__(
        self,
        energy: str = en.SYMMETRIC_DIRICHLET,
        omega: float = 1e5,
        epsilon: float = 1e-4,
        max_iters: int = 100,
        arap_iters: int = 10,
    ):
        self.energy = energy
        self.omega = omega
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.arap_iters = arap_iters

    def _config(self) -> SolverConfig:
        return SolverConfig(
            omega=self.omega,
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            arap_iters=self.arap_iters,
        )

    def fit(self, mesh: TetMesh, y=None) -> "DeformationEstimator":
        """Bind the rest mesh and its handle group."""
        if not isinstance(mesh, TetMesh):
            raise ValidationError("fit expects a TetMesh")
        if len(mesh.handle_indices) == 0:
            raise ValidationError("mesh has no handle_indices to constrain")
        # validated here so predict can assume a consistent pair
        self.mesh_ = mesh
        self.handles_ = HandleConstraint.from_mesh(mesh)
        self.model_ = en.EnergyModel(kind=self.energy, omega=self.omega)
        self.reports_: List[SolveReport] = []
        return self

    def predict(self, poses: Union[Sequence[RigidPose], Sequence[PoseFrame]]) -> np.ndarray:
        """Deformed vertex positions per pose, shape (n_frames, n_vertices, 3)."""
        if not hasattr(self, "mesh_"):
            raise ValidationError("estimator is not fitted")
        pose_list = [p.pose if isinstance(p, PoseFrame) else p for p in poses]
        self.reports_ = list(
            track_sequence(self.mesh_, self.model_, self.handles_, pose_list, self._config())
        )
        failed = [i for i, r in enumerate(self.reports_) if r.error is not None]
        if failed:
            raise ValidationError(f"solve failed on frame {failed[0]}: {self.reports_[failed[0]].error}")
        return np.stack([r.final_state.positions for r in self.reports_])
