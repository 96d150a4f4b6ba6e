"""Parsing and serialization of every artifact file format.

All formats are JSON or JSON Lines, UTF-8, LF line endings, millimeters.
Floats are written with Python's shortest round-trip representation, so
serialize -> parse is lossless. Parsers convert malformed input of any kind
into :class:`~propsense.errors.ParseError` with path/line context instead of
crashing.

Formats
-------
mesh:         ``{"units": "mm", "vertices": [[x,y,z],...], "tets": [[a,b,c,d],...],
              "handle_indices": [...], "contact_indices": [...]}``
pose stream:  one object per line: ``{"t": seconds, "p": [x,y,z], "q": [w,x,y,z]}``
truth stream: one object per line: ``{"t": seconds, "points": [[x,y,z],...]}``
markers:      ``{"markers": [{"id": "m1", "rest_position": [x,y,z]}, ...]}``
point cloud:  ``{"units": "mm", "points": [[x,y,z],...]}`` with optional parallel
              ``"normals"``
run report:   config echo, per-frame solve records ordered by t, optional
              aggregate error stats, and a wall-time histogram in ms buckets
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParseError, ValidationError
from .markers import ErrorStats
from .mesh import TetMesh
from .rigid import RigidPose

_QUAT_NORM_TOL = 1e-6  # quaternions this close to unit are normalized, else rejected

TIMING_BUCKET_EDGES_MS = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 250.0, 500.0, 1000.0]


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path=path) from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}", path=path) from exc


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise ParseError(f"cannot write file: {exc}", path=path) from exc


def _loads(text: str, path=None, line=None):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        lineno = line if line is not None else exc.lineno
        raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=lineno) from exc


def _require(obj, key, path=None, line=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"missing required key {key!r}", path=path, line=line)
    return obj[key]


def _as_matrix(value, width, what, path=None, line=None) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, width)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ParseError(f"{what}: expected rows of length {width}", path=path, line=line)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{what}: non-finite value", path=path, line=line)
    return arr


# ---------------------------------------------------------------------------
# mesh

def mesh_from_json(text: str, path=None) -> TetMesh:
    obj = _loads(text, path=path)
    units = _require(obj, "units", path=path)
    if units != "mm":
        raise ParseError(f"unsupported units {units!r} (expected 'mm')", path=path)
    vertices = _as_matrix(_require(obj, "vertices", path=path), 3, "vertices", path=path)
    tets = np.asarray(_require(obj, "tets", path=path))
    try:
        return TetMesh.from_arrays(
            vertices,
            tets,
            handle_indices=obj.get("handle_indices", ()),
            contact_indices=obj.get("contact_indices", ()),
        )
    except ValidationError as exc:
        raise ParseError(str(exc), path=path) from exc


def mesh_to_json(mesh: TetMesh) -> str:
    return json.dumps(
        {
            "units": "mm",
            "vertices": mesh.vertices.tolist(),
            "tets": mesh.tets.tolist(),
            "handle_indices": mesh.handle_indices.tolist(),
            "contact_indices": mesh.contact_indices.tolist(),
        }
    )


def parse_mesh(path) -> TetMesh:
    return mesh_from_json(_read_text(path), path=path)


def serialize_mesh(mesh: TetMesh, path) -> None:
    _write_text(path, mesh_to_json(mesh) + "\n")


# ---------------------------------------------------------------------------
# pose stream

@dataclass(frozen=True)
class PoseFrame:
    t: float
    pose: RigidPose


def _pose_from_line(obj, path, line) -> PoseFrame:
    t = _require(obj, "t", path=path, line=line)
    p = _require(obj, "p", path=path, line=line)
    q = _require(obj, "q", path=path, line=line)
    if not isinstance(t, (int, float)) or not math.isfinite(t):
        raise ParseError("'t' must be a finite number", path=path, line=line)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ParseError("'p' must be a finite [x, y, z]", path=path, line=line)
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise ParseError("'q' must be a finite [w, x, y, z]", path=path, line=line)
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > _QUAT_NORM_TOL:
        raise ParseError(f"quaternion norm {norm!r} is not 1 within {_QUAT_NORM_TOL}", path=path, line=line)
    if abs(norm - 1.0) > 1e-12:  # keep already-unit quaternions bit-identical
        q = q / norm
    return PoseFrame(t=float(t), pose=RigidPose(q, p))


def iter_pose_stream(path) -> Iterator[PoseFrame]:
    """Stream pose frames from a JSONL file, enforcing strictly ordered time."""
    prev_t = None
    for line_no, raw in enumerate(_read_text(path).splitlines(), start=1):
        if not raw.strip():
            continue
        frame = _pose_from_line(_loads(raw, path=path, line=line_no), path, line_no)
        if prev_t is not None and frame.t <= prev_t:
            raise ParseError(f"non-monotone time {frame.t!r} after {prev_t!r}", path=path, line=line_no)
        prev_t = frame.t
        yield frame


def parse_pose_stream(path) -> List[PoseFrame]:
    return list(iter_pose_stream(path))


def pose_stream_to_jsonl(frames: Iterable[PoseFrame]) -> str:
    lines = []
    for frame in frames:
        lines.append(
            json.dumps({"t": frame.t, "p": frame.pose.translation.tolist(), "q": frame.pose.rotation.tolist()})
        )
    return "\n".join(lines) + ("\n" if lines else "")


def serialize_pose_stream(frames: Iterable[PoseFrame], path) -> None:
    _write_text(path, pose_stream_to_jsonl(frames))


# ---------------------------------------------------------------------------
# truth stream (marker ground truth per frame)

def iter_truth_stream(path) -> Iterator[Tuple[float, np.ndarray]]:
    prev_t = None
    for line_no, raw in enumerate(_read_text(path).splitlines(), start=1):
        if not raw.strip():
            continue
        obj = _loads(raw, path=path, line=line_no)
        t = _require(obj, "t", path=path, line=line_no)
        if not isinstance(t, (int, float)) or not math.isfinite(t):
            raise ParseError("'t' must be a finite number", path=path, line=line_no)
        points = _as_matrix(_require(obj, "points", path=path, line=line_no), 3, "points", path=path, line=line_no)
        if prev_t is not None and t <= prev_t:
            raise ParseError(f"non-monotone time {t!r} after {prev_t!r}", path=path, line=line_no)
        prev_t = t
        yield float(t), points


def parse_truth_stream(path) -> List[Tuple[float, np.ndarray]]:
    return list(iter_truth_stream(path))


def serialize_truth_stream(frames: Iterable[Tuple[float, np.ndarray]], path) -> None:
    lines = [json.dumps({"t": float(t), "points": np.asarray(pts).tolist()}) for t, pts in frames]
    _write_text(path, "\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# markers

def parse_markers(path) -> List[Tuple[str, np.ndarray]]:
    obj = _loads(_read_text(path), path=path)
    out = []
    for i, entry in enumerate(_require(obj, "markers", path=path)):
        marker_id = _require(entry, "id", path=path)
        pos = np.asarray(_require(entry, "rest_position", path=path), dtype=np.float64)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ParseError(f"marker {i}: rest_position must be a finite [x, y, z]", path=path)
        out.append((str(marker_id), pos))
    return out


def serialize_markers(markers: Sequence[Tuple[str, np.ndarray]], path) -> None:
    obj = {
        "markers": [
            {"id": str(mid), "rest_position": np.asarray(pos, dtype=float).tolist()} for mid, pos in markers
        ]
    }
    _write_text(path, json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# point clouds

def cloud_from_json(text: str, path=None):
    obj = _loads(text, path=path)
    units = _require(obj, "units", path=path)
    if units != "mm":
        raise ParseError(f"unsupported units {units!r} (expected 'mm')", path=path)
    points = _as_matrix(_require(obj, "points", path=path), 3, "points", path=path)
    normals = None
    if obj.get("normals") is not None:
        normals = _as_matrix(obj["normals"], 3, "normals", path=path)
        if len(normals) != len(points):
            raise ParseError("normals must parallel points", path=path)
    return points, normals


def cloud_to_json(points, normals=None) -> str:
    obj = {"units": "mm", "points": np.asarray(points, dtype=float).reshape(-1, 3).tolist()}
    if normals is not None:
        obj["normals"] = np.asarray(normals, dtype=float).reshape(-1, 3).tolist()
    return json.dumps(obj)


def parse_cloud(path):
    return cloud_from_json(_read_text(path), path=path)


def serialize_cloud(points, path, normals=None) -> None:
    _write_text(path, cloud_to_json(points, normals) + "\n")


# ---------------------------------------------------------------------------
# run reports

@dataclass(frozen=True)
class FrameRecord:
    """Per-frame solve summary inside a run report."""

    t: float
    iterations: int
    final_gradient_norm: float
    final_energy: float
    constraint_violation: float
    wall_time: float
    min_element_det: float = float("inf")
    error: Optional[str] = None


@dataclass(frozen=True)
class RunReport:
    """Config echo, per-frame records ordered by t, aggregates, and timing."""

    config: dict
    frames: List[FrameRecord] = field(default_factory=list)
    error_stats: Optional[ErrorStats] = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        times = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("report frames must be strictly ordered by t")

    def timing_histogram(self) -> dict:
        ms = np.array([f.wall_time * 1e3 for f in self.frames])
        edges = TIMING_BUCKET_EDGES_MS
        counts = np.zeros(len(edges) + 1, dtype=int)
        if ms.size:
            counts = np.bincount(np.searchsorted(edges, ms, side="right"), minlength=len(edges) + 1)
        return {"edges_ms": list(edges), "counts": counts.tolist()}


def _num_out(x: float):
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _num_in(x, path=None) -> float:
    if x is None:
        return float("nan")
    if x == "inf":
        return float("inf")
    if x == "-inf":
        return float("-inf")
    if not isinstance(x, (int, float)):
        raise ParseError(f"expected a number, got {x!r}", path=path)
    return float(x)


def _error_stats_out(stats: Optional[ErrorStats]):
    if stats is None:
        return None
    return {
        "per_axis": np.asarray(stats.per_axis).tolist(),
        "norms": np.asarray(stats.norms).tolist(),
        "median_norm": stats.median_norm,
        "mean_norm": stats.mean_norm,
    }


def _error_stats_in(obj, path=None) -> Optional[ErrorStats]:
    if obj is None:
        return None
    return ErrorStats(
        per_axis=np.asarray(_require(obj, "per_axis", path=path), dtype=float),
        norms=np.asarray(_require(obj, "norms", path=path), dtype=float),
        median_norm=float(_require(obj, "median_norm", path=path)),
        mean_norm=float(_require(obj, "mean_norm", path=path)),
    )


def report_to_json(report: RunReport) -> str:
    return json.dumps(
        {
            "config": report.config,
            "frames": [
                {
                    "t": f.t,
                    "iterations": f.iterations,
                    "final_gradient_norm": _num_out(f.final_gradient_norm),
                    "final_energy": _num_out(f.final_energy),
                    "constraint_violation": _num_out(f.constraint_violation),
                    "wall_time": f.wall_time,
                    "min_element_det": _num_out(f.min_element_det),
                    "error": f.error,
                }
                for f in report.frames
            ],
            "error_stats": _error_stats_out(report.error_stats),
            "timing_histogram": report.timing_histogram(),
            "extras": report.extras,
        }
    )


def report_from_json(text: str, path=None) -> RunReport:
    obj = _loads(text, path=path)
    frames = []
    for f in _require(obj, "frames", path=path):
        frames.append(
            FrameRecord(
                t=float(_require(f, "t", path=path)),
                iterations=int(_require(f, "iterations", path=path)),
                final_gradient_norm=_num_in(f.get("final_gradient_norm"), path),
                final_energy=_num_in(f.get("final_energy"), path),
                constraint_violation=_num_in(f.get("constraint_violation"), path),
                wall_time=float(_require(f, "wall_time", path=path)),
                min_element_det=_num_in(f.get("min_element_det"), path),
                error=f.get("error"),
            )
        )
    return RunReport(
        config=_require(obj, "config", path=path),
        frames=frames,
        error_stats=_error_stats_in(obj.get("error_stats"), path=path),
        extras=obj.get("extras", {}),
    )


def write_report(report: RunReport, path) -> None:
    _write_text(path, report_to_json(report) + "\n")


def parse_report(path) -> RunReport:
    return report_from_json(_read_text(path), path=path)
