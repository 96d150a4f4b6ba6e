import numpy as np
import pytest

from propsense.energy import (
    ARAP,
    REST_ENERGY_PER_TET,
    EnergyModel,
    augmented_objective,
    closest_rotation,
    closest_rotations,
    deformation_gradient,
    deformation_gradients,
    element_energies,
    project_psd,
    psi_element,
    total_energy,
)
from propsense.errors import ValidationError
from propsense.mesh import DeformState
from propsense.rigid import HandleConstraint, RigidPose

from conftest import random_noninverted_state

SD = EnergyModel()
ARAP_MODEL = EnergyModel(kind=ARAP)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return RigidPose(q, np.zeros(3)).matrix()


class TestDeformationGradient:
    def test_rest_is_identity(self, midsize_finger):
        A = deformation_gradients(midsize_finger, midsize_finger.vertices)
        assert np.abs(A - np.eye(3)).max() < 1e-12

    def test_uniform_scale(self, midsize_finger):
        A = deformation_gradients(midsize_finger, 2.0 * midsize_finger.vertices)
        assert np.abs(A - 2.0 * np.eye(3)).max() < 1e-12

    def test_rigid_motion_recovers_rotation(self, midsize_finger):
        rng = np.random.default_rng(0)
        R = random_rotation(rng)
        state = DeformState(midsize_finger.vertices @ R.T + np.array([3.0, -1.0, 2.0]))
        for tet in (0, 5, midsize_finger.n_tets - 1):
            A = deformation_gradient(midsize_finger, state, tet)
            assert np.abs(A - R).max() < 1e-12


class TestPsiElement:
    def test_identity_sd_is_six(self):
        assert psi_element(np.eye(3), SD) == pytest.approx(6.0)

    def test_diag_211_sd(self):
        assert psi_element(np.diag([2.0, 1, 1]), SD) == pytest.approx(8.25)

    def test_diag_211_arap(self):
        assert psi_element(np.diag([2.0, 1, 1]), ARAP_MODEL) == pytest.approx(1.0)

    def test_inverted_gives_infinity(self):
        assert psi_element(np.diag([-1.0, 1, 1]), SD) == np.inf

    def test_sd_lower_bound_six_on_random_matrices(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(100_000, 3, 3))
        psi = element_energies(A, SD)
        finite = psi[np.isfinite(psi)]
        assert finite.min() >= 6.0 - 1e-9

    def test_sd_rotation_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            A = rng.normal(size=(3, 3)) + 2 * np.eye(3)
            if np.linalg.det(A) <= 0:
                continue
            R = random_rotation(rng)
            base = psi_element(A, SD)
            assert psi_element(R @ A, SD) == pytest.approx(base, rel=1e-10)
            assert psi_element(A @ R, SD) == pytest.approx(base, rel=1e-10)

    def test_arap_zero_iff_rotation(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            R = random_rotation(rng)
            assert psi_element(R, ARAP_MODEL) < 1e-25
            A = R + 0.01 * rng.normal(size=(3, 3))
            assert psi_element(A, ARAP_MODEL) > 1e-8


class TestClosestRotation:
    def test_projects_rotation_to_itself(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            R0 = random_rotation(rng)
            assert np.abs(closest_rotation(R0) - R0).max() < 1e-12

    def test_positive_diagonal_gives_identity(self):
        assert np.abs(closest_rotation(np.diag([2.0, 3.0, 4.0])) - np.eye(3)).max() < 1e-12

    def test_reflection_case_monte_carlo_oracle(self):
        # det < 0 input: verify our R attains the minimum over a large sample
        # of random rotations (the minimizer set is degenerate for this A, so
        # the oracle checks the objective value, not the particular R)
        A = np.diag([1.0, 1.0, -1.0])
        R = closest_rotation(A)
        assert np.abs(R @ R.T - np.eye(3)).max() < 1e-10
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-10)
        ours = ((A - R) ** 2).sum()

        rng = np.random.default_rng(5)
        best = np.inf
        for _ in range(10):
            q = rng.normal(size=(100_000, 4))
            q /= np.linalg.norm(q, axis=1, keepdims=True)
            w, x, y, z = q.T
            Rs = np.empty((len(q), 3, 3))
            Rs[:, 0, 0] = 1 - 2 * (y * y + z * z)
            Rs[:, 0, 1] = 2 * (x * y - w * z)
            Rs[:, 0, 2] = 2 * (x * z + w * y)
            Rs[:, 1, 0] = 2 * (x * y + w * z)
            Rs[:, 1, 1] = 1 - 2 * (x * x + z * z)
            Rs[:, 1, 2] = 2 * (y * z - w * x)
            Rs[:, 2, 0] = 2 * (x * z - w * y)
            Rs[:, 2, 1] = 2 * (y * z + w * x)
            Rs[:, 2, 2] = 1 - 2 * (x * x + y * y)
            best = min(best, ((A[None] - Rs) ** 2).sum(axis=(1, 2)).min())
        # ours must not exceed the sampled minimum (up to sampling slack above it)
        assert ours <= best + 1e-9
        assert best - ours < 1e-2  # the sample got close to our optimum

    def test_orthonormal_and_proper_on_random_input(self):
        rng = np.random.default_rng(6)
        A = rng.normal(size=(500, 3, 3))
        R = closest_rotations(A)
        assert np.abs(R @ R.transpose(0, 2, 1) - np.eye(3)).max() < 1e-10
        assert np.abs(np.linalg.det(R) - 1.0).max() < 1e-10


class TestTotalEnergy:
    def test_rest_energy_is_six_per_tet(self, midsize_finger):
        e = total_energy(midsize_finger, DeformState.rest(midsize_finger), SD)
        assert e == pytest.approx(REST_ENERGY_PER_TET * midsize_finger.n_tets)

    def test_rigid_invariance(self, midsize_finger):
        rng = np.random.default_rng(7)
        R = random_rotation(rng)
        state = DeformState(midsize_finger.vertices @ R.T + np.array([5.0, 0, -2]))
        m = midsize_finger.n_tets
        assert total_energy(midsize_finger, state, SD) == pytest.approx(6.0 * m, rel=1e-12)
        assert total_energy(midsize_finger, state, ARAP_MODEL) == pytest.approx(0.0, abs=1e-18)

    def test_matches_independent_per_tet_loop(self, small_finger):
        rng = np.random.default_rng(8)
        x = random_noninverted_state(small_finger, rng)
        got = total_energy(small_finger, DeformState(x), SD)
        expected = 0.0
        for t in range(small_finger.n_tets):
            corners = x[small_finger.tets[t]]
            ds = (corners[1:] - corners[0]).T
            A = ds @ small_finger.rest_dm_inv[t]
            B = np.linalg.inv(A)
            expected += (A * A).sum() + (B * B).sum()
        assert got == pytest.approx(expected, rel=1e-12)

    def test_reduction_order_independence(self, small_finger):
        rng = np.random.default_rng(9)
        x = random_noninverted_state(small_finger, rng)
        A = deformation_gradients(small_finger, x)
        psi = element_energies(A, SD)
        forward = float(psi.sum())
        reverse = float(psi[::-1].sum())
        assert forward == pytest.approx(reverse, rel=1e-9)

    def test_volume_weighting_flag(self, small_finger):
        weighted = EnergyModel(volume_weighted=True)
        e = total_energy(small_finger, DeformState.rest(small_finger), weighted)
        assert e == pytest.approx(6.0 * small_finger.rest_volume.sum(), rel=1e-12)


class TestAugmentedObjective:
    def test_rest_identity_is_stationary(self, small_finger):
        handles = HandleConstraint.from_mesh(small_finger)
        ev = augmented_objective(
            small_finger, DeformState.rest(small_finger), SD, handles, RigidPose.identity()
        )
        assert ev.energy == pytest.approx(6.0 * small_finger.n_tets)
        assert np.linalg.norm(ev.gradient) < 1e-9

    def test_gradient_matches_finite_differences(self, small_finger):
        rng = np.random.default_rng(10)
        handles = HandleConstraint.from_mesh(small_finger)
        pose = RigidPose.from_axis_angle([0, 0, 1], 0.1, translation=[1.0, 0, 0])
        x = random_noninverted_state(small_finger, rng)
        ev = augmented_objective(small_finger, DeformState(x), SD, handles, pose)

        h = 1e-5
        flat = x.ravel()
        fd = np.empty_like(flat)
        for k in range(flat.size):
            xp = flat.copy(); xp[k] += h
            xm = flat.copy(); xm[k] -= h
            ep = augmented_objective(small_finger, DeformState(xp.reshape(-1, 3)), SD, handles, pose).energy
            em = augmented_objective(small_finger, DeformState(xm.reshape(-1, 3)), SD, handles, pose).energy
            fd[k] = (ep - em) / (2 * h)
        assert np.linalg.norm(ev.gradient - fd) / np.linalg.norm(fd) < 1e-5

    def test_hessian_vector_matches_gradient_fd(self, small_finger):
        rng = np.random.default_rng(11)
        handles = HandleConstraint.from_mesh(small_finger)
        pose = RigidPose.from_axis_angle([1, 0, 0], 0.05)
        x = random_noninverted_state(small_finger, rng)
        ev = augmented_objective(
            small_finger, DeformState(x), SD, handles, pose, with_hessian=True, project=False
        )
        h = 1e-6
        for _ in range(10):
            v = rng.normal(size=x.size)
            v /= np.linalg.norm(v)
            gp = augmented_objective(
                small_finger, DeformState((x.ravel() + h * v).reshape(-1, 3)), SD, handles, pose
            ).gradient
            gm = augmented_objective(
                small_finger, DeformState((x.ravel() - h * v).reshape(-1, 3)), SD, handles, pose
            ).gradient
            fd = (gp - gm) / (2 * h)
            hv = ev.hessian @ v
            assert np.linalg.norm(hv - fd) / np.linalg.norm(fd) < 1e-4

    def test_hessian_symmetric(self, small_finger):
        rng = np.random.default_rng(12)
        handles = HandleConstraint.from_mesh(small_finger)
        x = random_noninverted_state(small_finger, rng)
        ev = augmented_objective(
            small_finger, DeformState(x), SD, handles, RigidPose.identity(), with_hessian=True
        )
        asym = abs(ev.hessian - ev.hessian.T).max()
        assert asym < 1e-10 * max(1.0, abs(ev.hessian).max())

    def test_projected_blocks_have_no_negative_eigenvalues(self, small_finger):
        from propsense.energy import _element_hessians_sd, _projected_element_hessians_sd

        rng = np.random.default_rng(13)
        x = random_noninverted_state(small_finger, rng, scale=0.1)
        A = deformation_gradients(small_finger, x)
        B = np.linalg.inv(A)
        blocks = _projected_element_hessians_sd(small_finger, B)
        w = np.linalg.eigvalsh(blocks)
        scale = np.abs(w).max(axis=1)
        assert (w.min(axis=1) >= -1e-8 * np.maximum(scale, 1.0)).all()
        # and it matches the generic eigen-clamp path
        direct = project_psd(_element_hessians_sd(small_finger, B))
        assert np.abs(direct - blocks).max() < 1e-9 * max(1.0, np.abs(direct).max())

    def test_energy_sentinel_propagates(self, small_finger):
        handles = HandleConstraint.from_mesh(small_finger)
        x = small_finger.vertices.copy()
        tet = small_finger.tets[0]
        x[tet[0]] = x[tet[1]] + (x[tet[1]] - x[tet[0]])  # invert one element
        ev = augmented_objective(small_finger, DeformState(x), SD, handles, RigidPose.identity())
        assert ev.energy == np.inf
        assert ev.gradient is None

    def test_arap_hessian_rejected(self, small_finger):
        handles = HandleConstraint.from_mesh(small_finger)
        with pytest.raises(ValidationError, match="local/global"):
            augmented_objective(
                small_finger,
                DeformState.rest(small_finger),
                ARAP_MODEL,
                handles,
                RigidPose.identity(),
                with_hessian=True,
            )

    def test_volume_weighted_gradient_matches_fd(self, single_tet):
        rng = np.random.default_rng(14)
        model = EnergyModel(volume_weighted=True)
        handles = HandleConstraint.from_mesh(single_tet)
        pose = RigidPose.from_axis_angle([0, 1, 0], 0.05)
        x = random_noninverted_state(single_tet, rng)
        ev = augmented_objective(single_tet, DeformState(x), model, handles, pose)
        h = 1e-6
        flat = x.ravel()
        fd = np.empty_like(flat)
        for k in range(flat.size):
            xp = flat.copy(); xp[k] += h
            xm = flat.copy(); xm[k] -= h
            fd[k] = (
                augmented_objective(single_tet, DeformState(xp.reshape(-1, 3)), model, handles, pose).energy
                - augmented_objective(single_tet, DeformState(xm.reshape(-1, 3)), model, handles, pose).energy
            ) / (2 * h)
        assert np.linalg.norm(ev.gradient - fd) / np.linalg.norm(fd) < 1e-5

    def test_model_validation(self):
        with pytest.raises(ValidationError):
            EnergyModel(kind="unknown")
        with pytest.raises(ValidationError):
            EnergyModel(omega=0.0)
