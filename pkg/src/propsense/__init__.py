"""Proprioceptive soft-body state estimation and tactile shape reconstruction.

Core pipeline: a tetrahedral soft-body mesh driven by one rigid handle group
is deformed by minimizing a distortion energy with a quadratic constraint
penalty; embedded points (markers, contacts) follow by barycentric
interpolation; contact points feed a Gaussian-process implicit surface that
reconstructs the touched object's shape patch by patch.
"""

from .energy import (
    ARAP,
    REST_ENERGY_PER_TET,
    SYMMETRIC_DIRICHLET,
    EnergyModel,
    ObjectiveEval,
    augmented_objective,
    closest_rotation,
    closest_rotations,
    deformation_gradient,
    deformation_gradients,
    psi_element,
    total_energy,
)
from .errors import MeshError, NumericalError, ParseError, PropsenseError, ValidationError
from .estimators import DeformationEstimator
from .gpis import (
    GaussianProcessImplicitSurface,
    SurfacePatch,
    TrainingSet,
    chamfer_distance,
    concatenate_patches,
    extract_isosurface,
    generate_control_points,
    log_marginal_likelihood,
    rbf_kernel,
)
from .markers import (
    ErrorStats,
    MarkerAttachment,
    calibrate_marker,
    calibrate_markers,
    error_stats,
    extract_contact_points,
    predict_markers,
)
from .mesh import (
    BarycentricCoords,
    DeformState,
    TetMesh,
    barycentric_coords,
    boundary_faces,
    interpolate,
    load_mesh,
    nearest_tet,
)
from .rigid import HandleConstraint, RigidPose, apply_pose
from .solvers import SolveReport, SolverConfig, solve_arap, solve_newton, track_sequence

__version__ = "0.1.0"

__all__ = [
    "ARAP",
    "BarycentricCoords",
    "DeformState",
    "DeformationEstimator",
    "EnergyModel",
    "ErrorStats",
    "GaussianProcessImplicitSurface",
    "HandleConstraint",
    "MarkerAttachment",
    "MeshError",
    "NumericalError",
    "ObjectiveEval",
    "ParseError",
    "PropsenseError",
    "REST_ENERGY_PER_TET",
    "RigidPose",
    "SYMMETRIC_DIRICHLET",
    "SolveReport",
    "SolverConfig",
    "SurfacePatch",
    "TetMesh",
    "TrainingSet",
    "ValidationError",
    "apply_pose",
    "augmented_objective",
    "barycentric_coords",
    "boundary_faces",
    "calibrate_marker",
    "calibrate_markers",
    "chamfer_distance",
    "closest_rotation",
    "closest_rotations",
    "concatenate_patches",
    "deformation_gradient",
    "deformation_gradients",
    "error_stats",
    "extract_contact_points",
    "extract_isosurface",
    "generate_control_points",
    "interpolate",
    "load_mesh",
    "log_marginal_likelihood",
    "nearest_tet",
    "predict_markers",
    "psi_element",
    "rbf_kernel",
    "solve_arap",
    "solve_newton",
    "total_energy",
    "track_sequence",
]
