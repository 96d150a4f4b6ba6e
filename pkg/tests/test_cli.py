import json

import numpy as np
import pytest

from propsense.cli import main
from propsense import formats
from propsense.synth import finger_mesh


@pytest.fixture(scope="module")
def fixtures(tmp_path_factory):
    """Small mesh + pose/marker fixtures generated through the CLI itself."""
    root = tmp_path_factory.mktemp("cli")
    mesh = finger_mesh(2, 2, 4)
    formats.serialize_mesh(mesh, root / "mesh.json")
    assert main([
        "synth", "pose-ramp", "--ramp", "twist", "--frames", "5",
        "--amplitude-deg", "4", "--out", str(root),
    ]) == 0
    assert main([
        "synth", "truth-stream",
        "--mesh", str(root / "mesh.json"),
        "--poses", str(root / "poses.jsonl"),
        "--markers", str(root / "markers.json"),
        "--out", str(root),
    ]) == 1  # markers file does not exist yet: input error
    markers = [("m1", mesh.vertices.mean(axis=0) + [0, 0, 8.0]), ("m2", mesh.vertices.mean(axis=0))]
    formats.serialize_markers(markers, root / "markers.json")
    assert main([
        "synth", "truth-stream",
        "--mesh", str(root / "mesh.json"),
        "--poses", str(root / "poses.jsonl"),
        "--markers", str(root / "markers.json"),
        "--out", str(root),
    ]) == 0
    return root


class TestDeform:
    def test_identity_stream_stays_at_rest(self, fixtures, tmp_path):
        poses = tmp_path / "id.jsonl"
        poses.write_text(
            "\n".join(
                json.dumps({"t": float(i), "p": [0, 0, 0], "q": [1, 0, 0, 0]}) for i in range(3)
            )
            + "\n"
        )
        out = tmp_path / "out"
        code = main([
            "deform", "--mesh", str(fixtures / "mesh.json"), "--poses", str(poses),
            "--dump-frames", "--out", str(out),
        ])
        assert code == 0
        report = formats.parse_report(out / "report.json")
        assert len(report.frames) == 3
        assert all(f.iterations <= 1 for f in report.frames)
        pts, _ = formats.parse_cloud(out / "frames" / "frame_00002.json")
        mesh = formats.parse_mesh(fixtures / "mesh.json")
        assert np.abs(pts - mesh.vertices).max() < 1e-12

    def test_arap_flag_routes_solver(self, fixtures, tmp_path):
        out = tmp_path / "out"
        code = main([
            "deform", "--mesh", str(fixtures / "mesh.json"),
            "--poses", str(fixtures / "poses.jsonl"),
            "--model", "arap", "--arap-iters", "3", "--out", str(out),
        ])
        assert code == 0
        report = formats.parse_report(out / "report.json")
        assert report.config["model"] == "arap"
        assert all(f.iterations == 3 for f in report.frames)

    def test_missing_mesh_is_input_error(self, tmp_path):
        code = main(["deform", "--mesh", "nope.json", "--poses", "nope.jsonl", "--out", str(tmp_path)])
        assert code == 1

    def test_numerical_failure_is_exit_2(self, fixtures, tmp_path, monkeypatch):
        import propsense.cli as cli_mod
        from propsense.errors import NumericalError

        def boom(*args, **kwargs):
            raise NumericalError("synthetic numerical failure")

        monkeypatch.setattr(cli_mod, "track_sequence", boom)
        code = main([
            "deform", "--mesh", str(fixtures / "mesh.json"),
            "--poses", str(fixtures / "poses.jsonl"), "--out", str(tmp_path / "o"),
        ])
        assert code == 2


class TestTrack:
    def test_closed_loop_errors_are_tiny(self, fixtures, tmp_path):
        out = tmp_path / "out"
        code = main([
            "track",
            "--mesh", str(fixtures / "mesh.json"),
            "--poses", str(fixtures / "poses.jsonl"),
            "--markers", str(fixtures / "markers.json"),
            "--truth", str(fixtures / "truth.jsonl"),
            "--out", str(out),
        ])
        assert code == 0
        report = formats.parse_report(out / "report.json")
        assert report.error_stats is not None
        assert report.error_stats.median_norm < 1e-6

    def test_truth_length_mismatch_rejected(self, fixtures, tmp_path):
        short = tmp_path / "short.jsonl"
        lines = (fixtures / "truth.jsonl").read_text().splitlines()[:2]
        short.write_text("\n".join(lines) + "\n")
        code = main([
            "track",
            "--mesh", str(fixtures / "mesh.json"),
            "--poses", str(fixtures / "poses.jsonl"),
            "--markers", str(fixtures / "markers.json"),
            "--truth", str(short),
            "--out", str(tmp_path / "o"),
        ])
        assert code == 1


class TestGpis:
    def test_plane_pipeline(self, tmp_path):
        assert main(["synth", "plane", "--extent", "12", "--count", "50", "--seed", "3",
                     "--out", str(tmp_path)]) == 0
        out = tmp_path / "out"
        code = main([
            "gpis", "--cloud", str(tmp_path / "plane.json"),
            "--region=-4,-4,-2,4,4,2", "--resolution", "0.5",
            "--truth", str(tmp_path / "plane.json"),
            "--out", str(out),
        ])
        assert code == 0
        pts, _ = formats.parse_cloud(out / "patch.json")
        assert len(pts) > 50
        assert np.abs(pts[:, 2]).max() < 0.25
        report = formats.parse_report(out / "report.json")
        assert "chamfer_mm2" in report.extras

    def test_empty_extraction_warns_but_succeeds(self, tmp_path, capsys):
        assert main(["synth", "plane", "--count", "30", "--out", str(tmp_path)]) == 0
        code = main([
            "gpis", "--cloud", str(tmp_path / "plane.json"),
            "--region", "100,100,100,104,104,104", "--resolution", "0.5",
            "--out", str(tmp_path / "o"),
        ])
        assert code == 0
        assert "empty extraction" in capsys.readouterr().err

    def test_cloud_without_normals_rejected(self, tmp_path):
        formats.serialize_cloud(np.zeros((5, 3)), tmp_path / "bare.json")
        code = main([
            "gpis", "--cloud", str(tmp_path / "bare.json"),
            "--region", "0,0,0,1,1,1", "--out", str(tmp_path / "o"),
        ])
        assert code == 1


class TestSynthDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "sphere", "--radius", "10", "--count", "30",
                         "--seed", "11", "--out", str(out)]) == 0
        assert (a / "sphere.json").read_bytes() == (b / "sphere.json").read_bytes()

    def test_finger_mesh_generation(self, tmp_path):
        assert main(["synth", "finger-mesh", "--elements", "960", "--out", str(tmp_path)]) == 0
        mesh = formats.parse_mesh(tmp_path / "finger_960.json")
        assert mesh.n_tets == 960

    def test_unsupported_element_count_rejected(self, tmp_path):
        assert main(["synth", "finger-mesh", "--elements", "777", "--out", str(tmp_path)]) == 1


class TestBench:
    def test_small_bench_runs_and_orders(self, tmp_path):
        mesh_path = tmp_path / "mesh.json"
        formats.serialize_mesh(finger_mesh(2, 2, 4), mesh_path)
        out = tmp_path / "out"
        code = main([
            "bench", "--mesh", str(mesh_path), "--sweep-mesh", str(mesh_path),
            "--frames", "6", "--omega-sweep", "1e3,1e5", "--out", str(out),
        ])
        assert code == 0
        report = formats.parse_report(out / "bench.json")
        rows = report.extras["rows"]
        assert {r["method"] for r in rows} == {"newton", "arap"}
        assert all(r["run_time"] > 0 for r in rows)
        sweep = report.extras["omega_sweep"]
        assert len(sweep) == 2
        assert sweep[1]["constraint_violation"] <= sweep[0]["constraint_violation"]
