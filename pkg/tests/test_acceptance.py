"""Acceptance suite: every criterion runs at its stated tolerance and prints a
pass/fail line (run with ``pytest tests/test_acceptance.py -v -s``)."""

import time

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from propsense import formats
from propsense.bench import _final_states_and_times, run_omega_sweep
from propsense.energy import EnergyModel, augmented_objective, total_energy
from propsense.gpis import (
    GaussianProcessImplicitSurface,
    chamfer_distance,
    extract_isosurface,
    generate_control_points,
)
from propsense.markers import calibrate_markers, error_stats, predict_markers
from propsense.mesh import DeformState, TetMesh
from propsense.oracle import descent_reference
from propsense.rigid import HandleConstraint, RigidPose
from propsense.solvers import SolverConfig, solve_newton, track_sequence
from propsense.synth import (
    finger_mesh,
    pose_ramp,
    random_rigid_pose,
    six_motion_ramps,
    sphere_contacts,
    truth_stream_from_solve,
)

from conftest import random_noninverted_state


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def finger_1500():
    return finger_mesh(5, 5, 10)


def test_criterion_1_gradient_and_hessian_correctness():
    """Analytic gradient vs central FD (<1e-5) and Hessian-vector products vs
    gradient FD (<1e-4) on 10 random small meshes; under 10 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    grids = [(1, 1, 1), (1, 1, 2), (1, 1, 3), (1, 2, 2), (1, 1, 5),
             (1, 2, 3), (1, 1, 7), (2, 2, 2), (1, 2, 4), (1, 1, 4)]
    worst_grad = 0.0
    worst_hess = 0.0
    for grid in grids:
        mesh = finger_mesh(*grid, width=10 + rng.uniform(0, 10), height=30 + rng.uniform(0, 30),
                           taper=rng.uniform(0.4, 1.0))
        assert 5 <= mesh.n_tets <= 50
        handles = HandleConstraint.from_mesh(mesh)
        pose = random_rigid_pose(rng, max_angle_deg=10, max_translation=2)
        model = EnergyModel()
        x = random_noninverted_state(mesh, rng)
        ev = augmented_objective(mesh, DeformState(x), model, handles, pose)

        h = 1e-5
        flat = x.ravel()
        fd = np.empty_like(flat)
        for k in range(flat.size):
            xp = flat.copy(); xp[k] += h
            xm = flat.copy(); xm[k] -= h
            fd[k] = (
                augmented_objective(mesh, DeformState(xp.reshape(-1, 3)), model, handles, pose).energy
                - augmented_objective(mesh, DeformState(xm.reshape(-1, 3)), model, handles, pose).energy
            ) / (2 * h)
        worst_grad = max(worst_grad, np.linalg.norm(ev.gradient - fd) / np.linalg.norm(fd))

        evh = augmented_objective(mesh, DeformState(x), model, handles, pose, with_hessian=True, project=False)
        hh = 1e-6
        for _ in range(10):
            v = rng.normal(size=flat.size)
            v /= np.linalg.norm(v)
            gp = augmented_objective(mesh, DeformState((flat + hh * v).reshape(-1, 3)), model, handles, pose).gradient
            gm = augmented_objective(mesh, DeformState((flat - hh * v).reshape(-1, 3)), model, handles, pose).gradient
            fdv = (gp - gm) / (2 * hh)
            worst_hess = max(worst_hess, np.linalg.norm(evh.hessian @ v - fdv) / np.linalg.norm(fdv))
    elapsed = time.perf_counter() - t0
    ok = worst_grad < 1e-5 and worst_hess < 1e-4 and elapsed < 10.0
    _report(
        "criterion 1 (derivative correctness)",
        ok,
        f"grad rel err {worst_grad:.2e} (<1e-5), hess-vec rel err {worst_hess:.2e} (<1e-4), {elapsed:.1f}s (<10s)",
    )


def test_criterion_2_rigid_motion_optimality(finger_1500):
    """20 random rigid poses at omega=1e5 on the 1.5k mesh reach the global
    energy level with penalty-consistent violation and no inversion; <60 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(200)
    mesh = finger_1500
    m = mesh.n_tets
    handles = HandleConstraint.from_mesh(mesh)
    model = EnergyModel(omega=1e5)
    cfg = SolverConfig(omega=1e5)
    slack = 10.0 * np.sqrt(6.0 * m / 1e5)
    worst_energy = 0.0
    worst_violation = 0.0
    min_det = np.inf
    for _ in range(20):
        pose = random_rigid_pose(rng, max_angle_deg=90, max_translation=10)
        rep = solve_newton(mesh, model, handles, pose, cfg=cfg)
        worst_energy = max(worst_energy, rep.final_energy)
        worst_violation = max(worst_violation, rep.constraint_violation)
        min_det = min(min_det, rep.min_element_det)
    elapsed = time.perf_counter() - t0
    ok = (
        worst_energy <= 6.0 * m + 1e-6 * 6.0 * m
        and worst_violation < slack
        and min_det > 0.0
        and elapsed < 60.0
    )
    _report(
        "criterion 2 (rigid-motion optimality)",
        ok,
        f"max energy {worst_energy:.6f} (<= {6.0 * m * (1 + 1e-6):.6f}), "
        f"max violation {worst_violation:.2e} (< {slack:.2f} mm), min det {min_det:.3f} (>0), "
        f"{elapsed:.1f}s (<60s)",
    )


def test_criterion_3_oracle_equivalence():
    """Newton minimizer vs long-run gradient-descent reference on <=100-element
    meshes, 10 random poses, within 1e-3 of the bounding-box diagonal; <5 min.

    The shared objective uses omega=1e2: plain gradient descent needs that
    conditioning to converge within its million-step budget."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(300)
    omega = 1e2
    model = EnergyModel(omega=omega)
    cfg = SolverConfig(omega=omega, epsilon=1e-6, max_iters=300)
    worst_rel = 0.0
    for mesh in (finger_mesh(2, 2, 2), finger_mesh(2, 2, 4)):
        assert mesh.n_tets <= 100
        handles = HandleConstraint.from_mesh(mesh)
        diag = mesh.bounding_box_diagonal()
        for _ in range(5):
            pose = random_rigid_pose(rng, max_angle_deg=8, max_translation=2)
            ref, _ = descent_reference(mesh, handles, pose, omega=omega, max_steps=1_000_000, grad_tol=1e-5)
            rep = solve_newton(mesh, model, handles, pose, cfg=cfg)
            dist = np.linalg.norm(rep.final_state.positions - ref.positions, axis=1).max()
            worst_rel = max(worst_rel, dist / diag)
    elapsed = time.perf_counter() - t0
    ok = worst_rel < 1e-3 and elapsed < 300.0
    _report(
        "criterion 3 (oracle equivalence)",
        ok,
        f"max node distance {worst_rel:.2e} of bbox diagonal (<1e-3), {elapsed:.0f}s (<300s)",
    )


def test_criterion_4_omega_monotone_violation():
    """Constraint violation non-increasing across omega in {1e2..1e7} at a
    fixed pose."""
    mesh = finger_mesh(2, 2, 4)
    motions = six_motion_ramps(mesh, frames=5)
    pose = motions["oblique"][-1].pose
    rows = run_omega_sweep(mesh, pose, omegas=(1e2, 1e3, 1e4, 1e5, 1e6, 1e7))
    violations = [r.constraint_violation for r in rows]
    ok = all(b <= a for a, b in zip(violations, violations[1:]))
    _report(
        "criterion 4 (omega monotonicity)",
        ok,
        "violations " + " >= ".join(f"{v:.2e}" for v in violations),
    )


def test_criterion_5_comparative_ordering(finger_1500):
    """At 1.5k elements: Newton median frame time < ARAP(10) median frame time,
    Newton final symmetric-Dirichlet energy <= ARAP's, and the warm-start soft
    target of 250 ms per frame. Paper-reported absolute times are context only.

    Protocol: the six motions tracked at camera-rate pose sampling (240 frames,
    about two seconds at 120 fps), both methods warm-started per frame."""
    mesh = finger_1500
    motions = six_motion_ramps(mesh, frames=240)
    cfg = SolverConfig()
    sd = EnergyModel()
    finals = {}
    medians = {}
    for method in ("newton", "arap"):
        f, times, _ = _final_states_and_times(mesh, method, motions, cfg)
        finals[method] = f
        medians[method] = float(np.median(times))
    energy_ok = True
    for name in motions:
        e_newton = total_energy(mesh, finals["newton"][name], sd)
        e_arap = total_energy(mesh, finals["arap"][name], sd)
        if not e_newton <= e_arap * (1 + 1e-12) + 1e-9:
            energy_ok = False
    ok = medians["newton"] < medians["arap"] and energy_ok and medians["newton"] <= 0.250
    _report(
        "criterion 5 (comparative ordering)",
        ok,
        f"median frame: newton {medians['newton'] * 1e3:.1f} ms < arap {medians['arap'] * 1e3:.1f} ms; "
        f"SD energy ordering {'holds' if energy_ok else 'violated'}; "
        f"soft target {medians['newton'] * 1e3:.1f} <= 250 ms "
        f"(paper context: 0.0452 s vs 0.0776 s)",
    )


def test_criterion_6_marker_pipeline():
    """Closed-loop marker errors < 1e-6 mm; with N(0, 1 mm) truth noise the
    median error norm matches the chi(3) median within 10% over >=3000 samples."""
    mesh = finger_mesh(2, 2, 4)
    rng = np.random.default_rng(600)
    n_markers, n_frames = 30, 110
    center = mesh.vertices.mean(axis=0)
    span = (mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)) / 3.0
    marker_rest = center + rng.uniform(-1, 1, size=(n_markers, 3)) * span
    frames = pose_ramp("twist", frames=n_frames, amplitude_deg=10)
    model = EnergyModel()
    cfg = SolverConfig()
    handles = HandleConstraint.from_mesh(mesh)
    attachments = calibrate_markers(mesh, marker_rest)

    clean_truth = truth_stream_from_solve(mesh, frames, marker_rest, cfg=cfg)
    predicted = []
    for report in track_sequence(mesh, model, handles, (f.pose for f in frames), cfg):
        assert report.error is None
        predicted.append(predict_markers(report.final_state, mesh, attachments))
    predicted = np.concatenate(predicted)
    truth_pts = np.concatenate([pts for _, pts in clean_truth])
    closed_loop = error_stats(predicted, truth_pts)

    noise = rng.normal(0.0, 1.0, size=truth_pts.shape)
    noisy = error_stats(predicted, truth_pts + noise)
    n_samples = len(noisy.norms)

    # independent sampling oracle for the chi(3) median
    oracle_rng = np.random.default_rng(601)
    ref_median = float(np.median(np.linalg.norm(oracle_rng.normal(size=(1_000_000, 3)), axis=1)))

    ok = (
        closed_loop.norms.max() < 1e-6
        and n_samples >= 3000
        and abs(noisy.median_norm - ref_median) <= 0.10 * ref_median
    )
    _report(
        "criterion 6 (marker pipeline)",
        ok,
        f"closed-loop max {closed_loop.norms.max():.2e} mm (<1e-6); noisy median "
        f"{noisy.median_norm:.4f} vs chi3 median {ref_median:.4f} (+-10%) over {n_samples} samples "
        f"(paper context: 1.96 mm median on hardware, mocap within 3 mm)",
    )


def test_criterion_7_gpis_properties():
    """Noise-free interpolation, prior reversion, 0.2 mm sphere reconstruction
    with radius error < 2% and Chamfer below (2*voxel)^2, exact brute-force
    agreement of the Chamfer metric."""
    r = 40.0
    pts, nrm = sphere_contacts(radius=r, count=150, seed=700, cap_angle=np.deg2rad(40))

    # noise-free interpolation at the training points
    train0 = generate_control_points(pts, nrm, offset=2.0, noise_variance=0.0)
    interp_model = GaussianProcessImplicitSurface.from_training_set(
        train0, sigma_f2_bounds=(1.0, 500.0), length_scale_bounds=(2.0, 20.0)
    )
    interp_err = np.abs(interp_model.predict(train0.points) - train0.values).max()

    # far field reverts to the prior
    far = np.array([[900.0, -750.0, 1200.0]])
    far_mean, far_var = interp_model.predict(far, return_variance=True)
    far_ok = (
        abs(far_mean[0]) < 1e-6 * np.sqrt(interp_model.sigma_f2_)
        and abs(far_var[0] - interp_model.sigma_f2_) < 1e-6 * interp_model.sigma_f2_
    )

    # sphere reconstruction at the stated 0.2 mm voxel resolution
    train = generate_control_points(pts, nrm, offset=2.0, noise_variance=1e-6)
    model = GaussianProcessImplicitSurface.from_training_set(
        train, sigma_f2_bounds=(0.1, 1000.0), length_scale_bounds=(1.0, 50.0)
    )
    resolution = 0.2
    region = ([-10.0, -10.0, 36.0], [10.0, 10.0, 43.0])
    patch = extract_isosurface(model, region, resolution)
    radii = np.linalg.norm(patch.points, axis=1)
    radius_err = np.abs(radii - r).max() / r

    dense, _ = sphere_contacts(radius=r, count=60_000, seed=701, cap_angle=np.deg2rad(40))
    lo = patch.points.min(axis=0)
    hi = patch.points.max(axis=0)
    in_box = ((dense >= lo) & (dense <= hi)).all(axis=1)
    cd = chamfer_distance(patch.points, dense[in_box])
    cd_budget = (2 * resolution) ** 2

    # chamfer agrees with the O(n^2) brute force
    rng = np.random.default_rng(702)
    a = rng.normal(size=(100, 3)) * 5
    b = rng.normal(size=(100, 3)) * 5 + 1
    d2 = cdist(a, b, "sqeuclidean")
    brute = d2.min(axis=1).mean() + d2.min(axis=0).mean()
    cd_small = chamfer_distance(a, b)
    chamfer_ok = abs(cd_small - brute) <= 1e-12 * brute

    ok = interp_err <= 1e-6 and far_ok and radius_err < 0.02 and cd < cd_budget and chamfer_ok
    _report(
        "criterion 7 (GPIS properties)",
        ok,
        f"interp err {interp_err:.2e} (<=1e-6); far-field ok {far_ok}; sphere radius err "
        f"{radius_err:.4f} (<0.02) from {len(patch.points)} points; chamfer {cd:.4f} "
        f"(<{cd_budget}); brute-force agreement {chamfer_ok}",
    )


def test_criterion_8_determinism_and_round_trips(tmp_path):
    """Bit-identical repeated runs in single-threaded mode; lossless format
    round trips over >=1000 random instances per format."""
    from propsense.cli import main

    mesh = finger_mesh(2, 2, 3)
    mesh_path = tmp_path / "mesh.json"
    formats.serialize_mesh(mesh, mesh_path)
    assert main(["synth", "pose-ramp", "--ramp", "bend_x", "--frames", "4",
                 "--amplitude-deg", "3", "--out", str(tmp_path)]) == 0
    poses_path = tmp_path / "poses.jsonl"

    runs = []
    for sub in ("run_a", "run_b"):
        out = tmp_path / sub
        assert main(["deform", "--mesh", str(mesh_path), "--poses", str(poses_path),
                     "--dump-frames", "--threads", "1", "--out", str(out)]) == 0
        frame_bytes = [(out / "frames" / f"frame_{i:05d}.json").read_bytes() for i in range(4)]
        report = formats.parse_report(out / "report.json")
        numeric = [
            (f.t, f.iterations, f.final_gradient_norm, f.final_energy, f.constraint_violation,
             f.min_element_det)
            for f in report.frames
        ]
        runs.append((frame_bytes, numeric))
    deterministic = runs[0][0] == runs[1][0] and runs[0][1] == runs[1][1]

    rng = np.random.default_rng(800)
    n = 1000

    pose_ok = True
    frames = []
    t = 0.0
    for _ in range(n):
        t += float(rng.uniform(0.01, 1.0))
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        frames.append(formats.PoseFrame(t=t, pose=RigidPose(q, rng.uniform(-100, 100, 3))))
    stream_path = tmp_path / "big.jsonl"
    formats.serialize_pose_stream(frames, stream_path)
    back = formats.parse_pose_stream(stream_path)
    for a, b in zip(frames, back):
        if not (a.t == b.t and np.array_equal(a.pose.rotation, b.pose.rotation)
                and np.array_equal(a.pose.translation, b.pose.translation)):
            pose_ok = False

    cloud_ok = True
    for _ in range(n):
        pts = rng.normal(size=(int(rng.integers(1, 8)), 3)) * rng.uniform(0.01, 1e4)
        normals = rng.normal(size=pts.shape) if rng.random() < 0.5 else None
        back_pts, back_nrm = formats.cloud_from_json(formats.cloud_to_json(pts, normals))
        if not np.array_equal(back_pts, pts):
            cloud_ok = False
        if normals is not None and not np.array_equal(back_nrm, normals):
            cloud_ok = False

    mesh_ok = True
    for _ in range(n):
        while True:
            verts = rng.uniform(-50, 50, size=(4, 3))
            if abs(np.linalg.det((verts[1:] - verts[0]).T)) > 1.0:
                break
        m1 = TetMesh.from_arrays(verts, [[0, 1, 2, 3]], handle_indices=[int(rng.integers(4))])
        m2 = formats.mesh_from_json(formats.mesh_to_json(m1))
        if not (np.array_equal(m1.vertices, m2.vertices) and np.array_equal(m1.tets, m2.tets)
                and np.array_equal(m1.handle_indices, m2.handle_indices)):
            mesh_ok = False

    report_ok = True
    for i in range(n):
        rec = formats.FrameRecord(
            t=float(i),
            iterations=int(rng.integers(0, 50)),
            final_gradient_norm=float(rng.uniform(0, 1)),
            final_energy=float(rng.uniform(0, 1e5)),
            constraint_violation=float(rng.uniform(0, 1)),
            wall_time=float(rng.uniform(0, 1)),
            min_element_det=float(rng.uniform(0, 2)),
        )
        r1 = formats.RunReport(config={"i": i}, frames=[rec])
        r2 = formats.report_from_json(formats.report_to_json(r1))
        if r2.frames[0] != rec or r2.config != {"i": i}:
            report_ok = False

    ok = deterministic and pose_ok and cloud_ok and mesh_ok and report_ok
    _report(
        "criterion 8 (determinism and round trips)",
        ok,
        f"repeat runs identical: {deterministic}; round trips over {n} instances: "
        f"poses {pose_ok}, clouds {cloud_ok}, meshes {mesh_ok}, reports {report_ok}",
    )
