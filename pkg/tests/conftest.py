import numpy as np
import pytest

from propsense.mesh import TetMesh
from propsense.synth import finger_mesh


@pytest.fixture
def single_tet():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return TetMesh.from_arrays(verts, [[0, 1, 2, 3]], handle_indices=[0])


@pytest.fixture
def two_tets():
    verts = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ]
    )
    return TetMesh.from_arrays(verts, [[0, 1, 2, 3], [1, 2, 3, 4]])


@pytest.fixture(scope="session")
def small_finger():
    """96-tet tapered finger, the workhorse mesh for solver tests."""
    return finger_mesh(2, 2, 4)


@pytest.fixture(scope="session")
def midsize_finger():
    """360-tet finger for tests that need more resolution."""
    return finger_mesh(3, 4, 5)


def random_noninverted_state(mesh: TetMesh, rng: np.random.Generator, scale: float = 0.05):
    """Rest positions plus a perturbation small enough to keep orientation."""
    from propsense.energy import deformation_gradients

    edge = mesh.bounding_box_diagonal() / 10.0
    for attempt in range(20):
        x = mesh.vertices + scale * edge * rng.normal(size=mesh.vertices.shape)
        if np.linalg.det(deformation_gradients(mesh, x)).min() > 0.05:
            return x
        scale *= 0.6
    raise AssertionError("could not generate a non-inverted state")
