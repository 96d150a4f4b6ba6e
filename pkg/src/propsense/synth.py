"""Deterministic generators for synthetic fixtures and oracle inputs.

Everything here is seedable and reproducible: structured tapered-prism finger
meshes (hexahedral grid split into 6 tets per cell, so every element is
positively oriented by construction), analytic sphere and plane contact sets,
parametrized pose ramps mimicking bend/oblique push/twist motions, and marker
truth streams generated by running the solver itself.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import energy as en
from .errors import ValidationError
from .formats import PoseFrame
from .markers import calibrate_markers, predict_markers
from .mesh import TetMesh
from .rigid import HandleConstraint, RigidPose
from .solvers import SolverConfig, track_sequence

# Six-tet split of a hex cell around its main diagonal; corners indexed by
# (dx, dy, dz) bit order. Orientation is positive and face diagonals match
# across neighboring cells.
_HEX_TO_TETS = np.array(
    [
        [0, 3, 1, 7],
        [0, 2, 3, 7],
        [0, 6, 2, 7],
        [0, 4, 6, 7],
        [0, 5, 4, 7],
        [0, 1, 5, 7],
    ]
)

#: Grid layouts of the benchmark finger family, keyed by element count.
FINGER_MESH_GRIDS: Dict[int, Tuple[int, int, int]] = {
    960: (4, 4, 10),
    1500: (5, 5, 10),
    3000: (5, 5, 20),
    6000: (5, 10, 20),
    12000: (10, 10, 20),
}


def finger_mesh(
    nx: int = 5,
    ny: int = 5,
    nz: int = 10,
    width: float = 20.0,
    depth: float = 20.0,
    height: float = 60.0,
    taper: float = 0.45,
    handle_layer: Optional[int] = None,
    contact_height_frac: float = 0.75,
) -> TetMesh:
    """Tapered-prism finger mesh with ``6 * nx * ny * nz`` tets.

    The cross section shrinks linearly from full size at the base (z = 0) to
    ``taper`` times it at the tip. One interior grid layer forms the rigid
    handle group (default: layer ``nz // 3``, roughly where a marker plate
    sits); boundary nodes above ``contact_height_frac * height`` form the
    contact set.
    """
    if min(nx, ny, nz) < 1:
        raise ValidationError("grid must have at least one cell per axis")
    if not 0 < taper <= 1.0:
        raise ValidationError("taper must be in (0, 1]")
    xs = np.linspace(-width / 2, width / 2, nx + 1)
    ys = np.linspace(-depth / 2, depth / 2, ny + 1)
    zs = np.linspace(0.0, height, nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    scale = 1.0 + (taper - 1.0) * (gz / height)
    vertices = np.stack([gx * scale, gy * scale, gz], axis=-1).reshape(-1, 3)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corners = [vid(i + dx, j + dy, k + dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]
                corners = np.array(corners)
                tets.append(corners[_HEX_TO_TETS])
    tets = np.concatenate(tets)

    if handle_layer is None:
        handle_layer = max(1, nz // 3)
    if not 0 <= handle_layer <= nz:
        raise ValidationError("handle_layer outside the grid")
    kk = np.arange(len(vertices)) % (nz + 1)
    handle_indices = np.flatnonzero(kk == handle_layer)

    ii = np.arange(len(vertices)) // ((ny + 1) * (nz + 1))
    jj = (np.arange(len(vertices)) // (nz + 1)) % (ny + 1)
    on_side = (ii == 0) | (ii == nx) | (jj == 0) | (jj == ny) | (kk == 0) | (kk == nz)
    contact_indices = np.flatnonzero(on_side & (vertices[:, 2] >= contact_height_frac * height))

    return TetMesh.from_arrays(vertices, tets, handle_indices, contact_indices)


def finger_mesh_family(sizes: Sequence[int] = (960, 1500, 3000, 6000, 12000)) -> Dict[int, TetMesh]:
    meshes = {}
    for size in sizes:
        if size not in FINGER_MESH_GRIDS:
            raise ValidationError(f"no grid layout for {size} elements; known: {sorted(FINGER_MESH_GRIDS)}")
        meshes[size] = finger_mesh(*FINGER_MESH_GRIDS[size])
    return meshes


def sphere_contacts(
    radius: float = 40.0,
    count: int = 200,
    seed: int = 0,
    cap_axis=(0.0, 0.0, 1.0),
    cap_angle: float = np.pi,
    center=(0.0, 0.0, 0.0),
):
    """Points on a sphere (optionally restricted to a cap) with outward normals."""
    if not radius > 0 or count < 1:
        raise ValidationError("need radius > 0 and count >= 1")
    rng = np.random.default_rng(seed)
    axis = np.asarray(cap_axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    # sample uniformly on the cap via the z-coordinate trick, then rotate
    zmin = np.cos(cap_angle)
    z = rng.uniform(zmin, 1.0, count)
    phi = rng.uniform(0.0, 2.0 * np.pi, count)
    r = np.sqrt(1.0 - z ** 2)
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    if not np.allclose(axis, [0.0, 0.0, 1.0]):
        helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(helper, axis)
        u /= np.linalg.norm(u)
        v = np.cross(axis, u)
        local = local @ np.stack([u, v, axis])
    normals = local
    points = np.asarray(center, dtype=float) + radius * normals
    return points, normals


def plane_contacts(extent: float = 20.0, count: int = 100, seed: int = 0, z: float = 0.0):
    """Points on the plane z = const with +z normals."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-extent / 2, extent / 2, (count, 2))
    points = np.column_stack([xy, np.full(count, z)])
    normals = np.tile([0.0, 0.0, 1.0], (count, 1))
    return points, normals


_MOTION_AXES = {
    "bend_x": (1.0, 0.0, 0.0),
    "bend_y": (0.0, 1.0, 0.0),
    "oblique": (1.0, 1.0, 0.0),
    "twist": (0.0, 0.0, 1.0),
}


def pose_ramp(
    kind: str,
    frames: int = 100,
    amplitude_deg: float = 10.0,
    translation=(0.0, 0.0, 0.0),
    pivot=(0.0, 0.0, 0.0),
    dt: float = 0.05,
) -> List[PoseFrame]:
    """Linear ramp from identity to the target motion over ``frames`` frames.

    Kinds: ``bend_x``, ``bend_y``, ``oblique``, ``twist`` (rotations about the
    pivot) and ``press`` (pure translation).
    """
    if frames < 1:
        raise ValidationError("frames must be >= 1")
    out = []
    translation = np.asarray(translation, dtype=float)
    for f in range(frames):
        s = (f + 1) / frames
        t = s * translation
        if kind == "press":
            pose = RigidPose(np.array([1.0, 0.0, 0.0, 0.0]), t)
        elif kind in _MOTION_AXES:
            angle = np.deg2rad(s * amplitude_deg)
            pose = RigidPose.from_axis_angle(_MOTION_AXES[kind], angle, translation=t, pivot=pivot)
        else:
            raise ValidationError(f"unknown ramp kind {kind!r}")
        out.append(PoseFrame(t=f * dt, pose=pose))
    return out


def six_motion_ramps(mesh: TetMesh, frames: int = 30, amplitude_deg: float = 12.0) -> Dict[str, List[PoseFrame]]:
    """The benchmark motion set: four bends, one twist, one press, all ramped."""
    base = mesh.vertices[mesh.handle_indices].mean(axis=0) if len(mesh.handle_indices) else np.zeros(3)
    height = mesh.vertices[:, 2].max() - mesh.vertices[:, 2].min()
    press = 0.08 * height
    return {
        "bend_x": pose_ramp("bend_x", frames, amplitude_deg, pivot=base),
        "bend_x_neg": pose_ramp("bend_x", frames, -amplitude_deg, pivot=base),
        "bend_y": pose_ramp("bend_y", frames, amplitude_deg, pivot=base),
        "oblique": pose_ramp("oblique", frames, amplitude_deg, pivot=base),
        "twist": pose_ramp("twist", frames, 1.5 * amplitude_deg, pivot=base),
        "press": pose_ramp("press", frames, translation=(0.0, 0.0, -press)),
    }


def random_rigid_pose(rng: np.random.Generator, max_angle_deg: float = 45.0, max_translation: float = 10.0) -> RigidPose:
    """Uniform random axis, bounded angle and translation."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(0.0, max_angle_deg))
    t = rng.uniform(-max_translation, max_translation, 3)
    return RigidPose.from_axis_angle(axis, angle, translation=t)


def truth_stream_from_solve(
    mesh: TetMesh,
    frames: Sequence[PoseFrame],
    marker_rest_points,
    model: Optional[en.EnergyModel] = None,
    cfg: SolverConfig = SolverConfig(),
    noise_std: float = 0.0,
    seed: int = 0,
) -> List[Tuple[float, np.ndarray]]:
    """Marker truth generated by the solver itself (a closed-loop fixture).

    With ``noise_std`` > 0, iid Gaussian noise is added per axis to emulate an
    imperfect ground-truth sensor.
    """
    if model is None:
        model = en.EnergyModel(omega=cfg.omega)
    handles = HandleConstraint.from_mesh(mesh)
    attachments = calibrate_markers(mesh, marker_rest_points)
    rng = np.random.default_rng(seed)
    out = []
    for frame, report in zip(frames, track_sequence(mesh, model, handles, (f.pose for f in frames), cfg)):
        points = predict_markers(report.final_state, mesh, attachments)
        if noise_std > 0:
            points = points + rng.normal(0.0, noise_std, points.shape)
        out.append((frame.t, points))
    return out
