"""Command-line interface.

Subcommands: ``deform`` (pose stream -> deformation report), ``track``
(marker error statistics against a ground-truth stream), ``gpis`` (contact
clouds -> reconstructed surface patches), ``bench`` (method/size timing table
and omega sweep), ``synth`` (deterministic fixture generation).

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import energy as en
from . import formats, synth
from .bench import run_benchmark
from .errors import NumericalError, ParseError, PropsenseError, ValidationError
from .gpis import (
    GaussianProcessImplicitSurface,
    chamfer_distance,
    concatenate_patches,
    extract_isosurface,
    generate_control_points,
)
from .markers import calibrate_markers, error_stats, predict_markers
from .rigid import HandleConstraint
from .solvers import SolverConfig, track_sequence

_MODEL_NAMES = {"sd": en.SYMMETRIC_DIRICHLET, "arap": en.ARAP}


def _solver_config(args) -> SolverConfig:
    return SolverConfig(
        omega=args.omega,
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        arap_iters=args.arap_iters,
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_echo(args, command: str) -> dict:
    skip = {"func", "out"}
    echo = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    echo["command"] = command
    return echo


def _frame_record(t: float, report) -> formats.FrameRecord:
    return formats.FrameRecord(
        t=t,
        iterations=report.iterations,
        final_gradient_norm=report.final_gradient_norm,
        final_energy=report.final_energy,
        constraint_violation=report.constraint_violation,
        wall_time=report.wall_time,
        min_element_det=report.min_element_det,
        error=report.error,
    )


def cmd_deform(args) -> int:
    mesh = formats.parse_mesh(args.mesh)
    frames = formats.parse_pose_stream(args.poses)
    model = en.EnergyModel(kind=_MODEL_NAMES[args.model], omega=args.omega)
    handles = HandleConstraint.from_mesh(mesh)
    cfg = _solver_config(args)
    out = _out_dir(args)
    if args.dump_frames:
        (out / "frames").mkdir(exist_ok=True)

    records = []
    for i, (frame, report) in enumerate(
        zip(frames, track_sequence(mesh, model, handles, (f.pose for f in frames), cfg))
    ):
        records.append(_frame_record(frame.t, report))
        if args.dump_frames:
            formats.serialize_cloud(report.final_state.positions, out / "frames" / f"frame_{i:05d}.json")
    report = formats.RunReport(config=_config_echo(args, "deform"), frames=records)
    formats.write_report(report, out / "report.json")
    failed = sum(1 for r in records if r.error is not None)
    print(f"deform: {len(records)} frames, {failed} failed -> {out / 'report.json'}")
    return 0


def cmd_track(args) -> int:
    mesh = formats.parse_mesh(args.mesh)
    frames = formats.parse_pose_stream(args.poses)
    marker_defs = formats.parse_markers(args.markers)
    truth = formats.parse_truth_stream(args.truth)
    if len(truth) != len(frames):
        raise ValidationError(f"truth stream has {len(truth)} frames but pose stream has {len(frames)}")
    model = en.EnergyModel(kind=_MODEL_NAMES[args.model], omega=args.omega)
    handles = HandleConstraint.from_mesh(mesh)
    attachments = calibrate_markers(mesh, [pos for _, pos in marker_defs])
    cfg = _solver_config(args)

    records = []
    predicted_all = []
    truth_all = []
    for frame, (t_truth, pts), report in zip(
        frames, truth, track_sequence(mesh, model, handles, (f.pose for f in frames), cfg)
    ):
        records.append(_frame_record(frame.t, report))
        if report.error is None:
            if len(pts) != len(attachments):
                raise ValidationError(
                    f"truth frame at t={t_truth} has {len(pts)} points for {len(attachments)} markers"
                )
            predicted_all.append(predict_markers(report.final_state, mesh, attachments))
            truth_all.append(pts)
    stats = error_stats(np.concatenate(predicted_all), np.concatenate(truth_all))
    report = formats.RunReport(config=_config_echo(args, "track"), frames=records, error_stats=stats)
    out = _out_dir(args)
    formats.write_report(report, out / "report.json")
    print(
        f"track: {len(records)} frames, median error {stats.median_norm:.4f} mm, "
        f"mean {stats.mean_norm:.4f} mm -> {out / 'report.json'}"
    )
    return 0


def _parse_region(text: str):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 6:
        raise ValidationError("--region expects x0,y0,z0,x1,y1,z1")
    return (parts[:3], parts[3:])


def cmd_gpis(args) -> int:
    region = _parse_region(args.region)
    out = _out_dir(args)
    patches = []
    fitted = []
    for cloud_path in args.cloud:
        points, normals = formats.parse_cloud(cloud_path)
        if normals is None:
            raise ValidationError(f"{cloud_path}: cloud needs normals for control-point generation")
        if args.flip_normals:
            normals = -normals
        train = generate_control_points(points, normals, offset=args.offset, noise_variance=args.noise)
        model = GaussianProcessImplicitSurface.from_training_set(train)
        lo = float(points[:, args.axis].min())
        hi = float(points[:, args.axis].max())
        patch = extract_isosurface(model, region, args.resolution, axis=args.axis, interval=(lo, hi))
        patches.append(patch)
        fitted.append(model)

    merged = concatenate_patches(patches, axis=args.axis)
    formats.serialize_cloud(merged, out / "patch.json")
    extras = {
        "points": int(len(merged)),
        "hyperparameters": [
            {"sigma_f2": m.sigma_f2_, "length_scale": m.length_scale_} for m in fitted
        ],
    }
    if len(merged) == 0:
        print("gpis: warning: empty extraction (no zero crossing in region)", file=sys.stderr)
    if args.truth is not None and len(merged):
        truth_points, _ = formats.parse_cloud(args.truth)
        extras["chamfer_mm2"] = chamfer_distance(merged, truth_points)
    report = formats.RunReport(config=_config_echo(args, "gpis"), frames=[], extras=extras)
    formats.write_report(report, out / "report.json")
    print(f"gpis: {len(merged)} surface points -> {out / 'patch.json'}")
    return 0


def cmd_bench(args) -> int:
    meshes = {}
    for path in args.mesh:
        mesh = formats.parse_mesh(path)
        meshes[mesh.n_tets] = mesh
    sweep_mesh = formats.parse_mesh(args.sweep_mesh) if args.sweep_mesh else None
    omegas = [float(x) for x in args.omega_sweep.split(",")] if args.omega_sweep else ()
    result = run_benchmark(
        meshes,
        sweep_mesh=sweep_mesh,
        frames=args.frames,
        omegas=omegas or (1e2, 1e3, 1e4, 1e5, 1e6, 1e7),
        cfg=_solver_config(args),
    )
    out = _out_dir(args)
    report = formats.RunReport(config=_config_echo(args, "bench"), frames=[], extras=result.to_dict())
    formats.write_report(report, out / "bench.json")
    for row in result.rows:
        print(
            f"bench: {row.method:>6} {row.elements:>6} elements: "
            f"median frame {row.run_time * 1e3:8.2f} ms, cross-method error {row.mean_error:.4f} mm"
        )
    for row in result.omega_sweep:
        print(f"bench: omega {row.omega:10.0e} violation {row.constraint_violation:.3e} mm")
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args)
    kind = args.kind
    if kind == "sphere":
        points, normals = synth.sphere_contacts(
            radius=args.radius, count=args.count, seed=args.seed, cap_angle=np.deg2rad(args.cap_deg)
        )
        formats.serialize_cloud(points, out / "sphere.json", normals=normals)
        print(f"synth: sphere cloud ({args.count} contacts) -> {out / 'sphere.json'}")
    elif kind == "plane":
        points, normals = synth.plane_contacts(extent=args.extent, count=args.count, seed=args.seed)
        formats.serialize_cloud(points, out / "plane.json", normals=normals)
        print(f"synth: plane cloud ({args.count} contacts) -> {out / 'plane.json'}")
    elif kind == "finger-mesh":
        if args.elements not in synth.FINGER_MESH_GRIDS:
            raise ValidationError(
                f"--elements must be one of {sorted(synth.FINGER_MESH_GRIDS)}"
            )
        mesh = synth.finger_mesh(*synth.FINGER_MESH_GRIDS[args.elements])
        formats.serialize_mesh(mesh, out / f"finger_{args.elements}.json")
        print(f"synth: finger mesh ({mesh.n_tets} tets) -> {out / f'finger_{args.elements}.json'}")
    elif kind == "pose-ramp":
        frames = synth.pose_ramp(args.ramp, frames=args.frames, amplitude_deg=args.amplitude_deg)
        formats.serialize_pose_stream(frames, out / "poses.jsonl")
        print(f"synth: {args.ramp} ramp ({args.frames} frames) -> {out / 'poses.jsonl'}")
    elif kind == "truth-stream":
        mesh = formats.parse_mesh(args.mesh)
        frames = formats.parse_pose_stream(args.poses)
        marker_defs = formats.parse_markers(args.markers)
        truth = synth.truth_stream_from_solve(
            mesh,
            frames,
            [pos for _, pos in marker_defs],
            cfg=_solver_config(args),
            noise_std=args.noise_std,
            seed=args.seed,
        )
        formats.serialize_truth_stream(truth, out / "truth.jsonl")
        print(f"synth: truth stream ({len(truth)} frames) -> {out / 'truth.jsonl'}")
    else:  # pragma: no cover - argparse restricts choices
        raise ValidationError(f"unknown synth kind {kind!r}")
    return 0


def _add_solver_args(p):
    p.add_argument("--model", choices=sorted(_MODEL_NAMES), default="sd")
    p.add_argument("--omega", type=float, default=1e5)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--arap-iters", type=int, default=10)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="only 1 is supported; kept for reproducibility records")
    p.add_argument("--out", default="out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="propsense", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("deform", help="solve a pose stream and write a run report")
    p.add_argument("--mesh", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--dump-frames", action="store_true", help="write per-frame vertex clouds")
    _add_solver_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("track", help="marker prediction errors against a truth stream")
    p.add_argument("--mesh", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--markers", required=True)
    p.add_argument("--truth", required=True)
    _add_solver_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("gpis", help="reconstruct surface patches from contact clouds")
    p.add_argument("--cloud", action="append", required=True, help="contact cloud with normals (repeatable)")
    p.add_argument("--region", required=True, help="x0,y0,z0,x1,y1,z1 (mm); use --region=... when x0 is negative")
    p.add_argument("--resolution", type=float, default=0.2, help="voxel spacing (mm)")
    p.add_argument("--offset", type=float, default=2.0, help="control point offset (mm)")
    p.add_argument("--noise", type=float, default=1e-6, help="observation noise variance (mm^2)")
    p.add_argument("--axis", type=int, choices=(0, 1, 2), default=0, help="exploration axis")
    p.add_argument("--flip-normals", action="store_true", help="negate input normals (finger-side convention)")
    p.add_argument("--truth", help="optional ground-truth cloud for a Chamfer report")
    _add_common(p)
    p.set_defaults(func=cmd_gpis)

    p = sub.add_parser("bench", help="timing/error comparison and omega sweep")
    p.add_argument("--mesh", action="append", required=True, help="mesh file (repeatable)")
    p.add_argument("--sweep-mesh", help="small mesh for the omega sweep")
    p.add_argument("--frames", type=int, default=240, help="frames per motion ramp")
    p.add_argument("--omega-sweep", help="comma-separated omega values")
    _add_solver_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate deterministic fixtures")
    p.add_argument("kind", choices=("sphere", "plane", "finger-mesh", "pose-ramp", "truth-stream"))
    p.add_argument("--radius", type=float, default=40.0)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--cap-deg", type=float, default=180.0)
    p.add_argument("--extent", type=float, default=20.0)
    p.add_argument("--elements", type=int, default=1500)
    p.add_argument("--ramp", choices=("bend_x", "bend_y", "oblique", "twist", "press"), default="twist")
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--amplitude-deg", type=float, default=10.0)
    p.add_argument("--mesh", help="mesh file (truth-stream)")
    p.add_argument("--poses", help="pose stream (truth-stream)")
    p.add_argument("--markers", help="marker file (truth-stream)")
    p.add_argument("--noise-std", type=float, default=0.0)
    _add_solver_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads != 1:
        print("propsense: only --threads 1 is supported; continuing single-threaded", file=sys.stderr)
    try:
        return args.func(args)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"propsense: input error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"propsense: numerical failure: {exc}", file=sys.stderr)
        return 2
    except PropsenseError as exc:  # pragma: no cover - safety net
        print(f"propsense: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
