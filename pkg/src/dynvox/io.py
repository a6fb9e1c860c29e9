"""Scan-stream files, mapping runs and their on-disk artifacts.

A scan stream is a directory holding ``manifest.json`` and one
``frame_%06d.json`` per frame with ``k``, ``sensor_pose`` (16 numbers,
row-major 4x4), ``points`` (``[x, y, z, label]`` rows, sensor frame) and
``motions`` (object id -> 16 numbers).  Streams written by the simulator also
carry ``scene.json`` so a later mapping run can score coverage.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .eval import CoverageReport, covered_mask, mesh_rmse, write_rmse_csv
from .geometry import InvalidPoseError, Pose, se3_apply, world_to_local
from .meshing import MeshCache, TriangleMesh, write_ply
from .simulator import Scene, iter_scans, scene_from_dict
from .submaps import STATIC_ID, MapRegistry, Scan, observe_scan, save_registry

log = logging.getLogger(__name__)

FORMAT = "dynvox-scans/1"
INCOMPLETE = ".incomplete"


class ScanFormatError(ValueError):
    """A scan-stream file is malformed; the message names frame and field."""


# ---------------------------------------------------------------------------
# scan streams


def frame_to_dict(scan: Scan) -> dict:
    pts = np.column_stack([scan.points, scan.labels]) if len(scan.points) else np.zeros((0, 4))
    rows = [[x, y, z, int(lab)] for x, y, z, lab in pts.tolist()]
    return {
        "k": int(scan.k),
        "sensor_pose": scan.sensor_pose.flat(),
        "points": rows,
        "motions": {str(j): m.flat() for j, m in sorted(scan.motions.items())},
    }


def _pose_field(value, frame: str, name: str) -> Pose:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScanFormatError(f"{frame}: field {name!r} is not numeric") from exc
    if arr.size != 16:
        raise ScanFormatError(f"{frame}: field {name!r} needs 16 numbers, got {arr.size}")
    try:
        return Pose.from_matrix(arr)
    except InvalidPoseError as exc:
        raise ScanFormatError(f"{frame}: field {name!r}: {exc}") from exc


def frame_from_dict(d: dict, frame: str = "frame") -> Scan:
    if not isinstance(d, dict):
        raise ScanFormatError(f"{frame}: expected a JSON object")
    for name in ("k", "sensor_pose", "points"):
        if name not in d:
            raise ScanFormatError(f"{frame}: missing field {name!r}")
    k = d["k"]
    if not isinstance(k, int) or isinstance(k, bool) or k < 0:
        raise ScanFormatError(f"{frame}: field 'k' must be a non-negative integer")
    pose = _pose_field(d["sensor_pose"], frame, "sensor_pose")
    try:
        pts = np.asarray(d["points"], dtype=float).reshape(-1, 4) if len(d["points"]) else np.zeros((0, 4))
    except (TypeError, ValueError) as exc:
        raise ScanFormatError(f"{frame}: field 'points' must be rows of [x, y, z, label]") from exc
    if not np.all(np.isfinite(pts)):
        raise ScanFormatError(f"{frame}: field 'points' holds non-finite values")
    labels = pts[:, 3]
    if np.any(labels < 0) or np.any(labels != np.round(labels)):
        raise ScanFormatError(f"{frame}: field 'points' labels must be non-negative integers")
    motions_raw = d.get("motions", {})
    if not isinstance(motions_raw, dict):
        raise ScanFormatError(f"{frame}: field 'motions' must be an object")
    motions = {}
    for key, value in motions_raw.items():
        try:
            j = int(key)
        except ValueError as exc:
            raise ScanFormatError(f"{frame}: field 'motions' key {key!r} is not an object id") from exc
        if j == STATIC_ID or j < 0:
            raise ScanFormatError(f"{frame}: field 'motions' key {j} is not an object id")
        motions[j] = _pose_field(value, frame, f"motions[{key}]")
    return Scan(k=k, sensor_pose=pose, points=pts[:, :3], labels=labels.astype(np.int64), motions=motions)


def write_scan_stream(scans, out_dir, scene_dict: dict | None = None, extra: dict | None = None) -> int:
    """Write scans as a stream directory; returns the frame count."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for scan in scans:
        (out / f"frame_{n:06d}.json").write_text(json.dumps(frame_to_dict(scan)) + "\n")
        n += 1
    manifest = {"format": FORMAT, "frames": n}
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if scene_dict is not None:
        (out / "scene.json").write_text(json.dumps(scene_dict, indent=2, sort_keys=True) + "\n")
    return n


def read_manifest(path) -> dict:
    src = Path(path)
    mpath = src / "manifest.json"
    if not mpath.exists():
        raise ScanFormatError(f"{src}: manifest.json not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ScanFormatError(f"{mpath}: invalid JSON ({exc})") from exc
    frames = manifest.get("frames") if isinstance(manifest, dict) else None
    if not isinstance(frames, int) or frames < 0:
        raise ScanFormatError(f"{mpath}: field 'frames' must be a non-negative integer")
    return manifest


def load_scan_stream(path):
    """Yield the scans of a stream directory in order, validating each frame."""
    src = Path(path)
    manifest = read_manifest(src)
    prev = None
    for n in range(manifest["frames"]):
        fpath = src / f"frame_{n:06d}.json"
        name = fpath.name
        if not fpath.exists():
            raise ScanFormatError(f"{name}: file missing (manifest lists {manifest['frames']} frames)")
        try:
            d = json.loads(fpath.read_text())
        except json.JSONDecodeError as exc:
            raise ScanFormatError(f"{name}: invalid JSON ({exc})") from exc
        scan = frame_from_dict(d, name)
        if prev is not None and scan.k <= prev:
            raise ScanFormatError(f"{name}: field 'k' = {scan.k} does not increase (previous {prev})")
        prev = scan.k
        yield scan


def load_stream_scene(path) -> Scene | None:
    p = Path(path) / "scene.json"
    return scene_from_dict(json.loads(p.read_text())) if p.exists() else None


# ---------------------------------------------------------------------------
# mapping runs


@dataclass
class RunSummary:
    frames: int = 0
    maps: list = field(default_factory=list)
    coverage: dict = field(default_factory=dict)  # object id -> final r_cov
    rmse: dict = field(default_factory=dict)  # object id -> final mesh RMSE [m]
    static_ms: list = field(default_factory=list)
    object_ms: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


def timing_stats(ms) -> dict:
    a = np.asarray(ms, dtype=float)
    if len(a) == 0:
        return {"count": 0, "mean": None, "median": None, "p95": None}
    return {"count": int(len(a)), "mean": float(a.mean()), "median": float(np.median(a)), "p95": float(np.percentile(a, 95))}


def _world_meshes(registry: MapRegistry, caches: dict) -> dict:
    out = {}
    for j in registry.map_ids():
        cache = caches.get(j)
        mesh = cache.mesh() if cache is not None else TriangleMesh()
        out[j] = mesh if j == STATIC_ID else mesh.transformed(registry.pose(j))
    return out


def _write_meshes(registry, caches, out: Path, tag: str) -> list[Path]:
    written = []
    for j, mesh in _world_meshes(registry, caches).items():
        name = "static" if j == STATIC_ID else f"object_{j}"
        p = out / f"{name}_{tag}.ply"
        write_ply(mesh, p)
        written.append(p)
    return written


def run_mapping(cfg: RunConfig, scans, out_dir, scene: Scene | None = None, figures: bool = True) -> RunSummary:
    """Map a scan sequence and write all artifacts to ``out_dir``.

    With ``scene`` (ground truth), per-frame coverage of every object is
    written to ``coverage_<id>.csv``.  ``.incomplete`` marks the directory
    until the run finishes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE
    marker.write_text("mapping run did not finish\n")
    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    mesh_dir = out / "meshes"
    mesh_dir.mkdir(exist_ok=True)

    registry = MapRegistry(cfg.fusion.voxel_size, cfg.policy)
    caches: dict[int, MeshCache] = {STATIC_ID: MeshCache(registry.static_map)}
    summary = RunSummary()
    gt_points = {}
    reports = {}
    if scene is not None:
        for obj in scene.objects:
            gt_points[obj.id] = obj.surface_points(cfg.gt_sample_spacing)
            reports[obj.id] = CoverageReport(total=len(gt_points[obj.id]), lambda_cover=cfg.lambda_cover)

    timing_rows = []
    for n, scan in enumerate(scans):
        try:
            t0 = time.perf_counter()
            res = observe_scan(registry, scan, cfg.fusion)
            total_ms = (time.perf_counter() - t0) * 1e3
        except Exception as exc:
            log.error("frame %d: %s", scan.k, exc)
            raise
        for j, leaves in res.dirty.items():
            if j not in caches:
                caches[j] = MeshCache(registry.grid(j))
            caches[j].update(leaves)
        summary.static_ms.append(res.static_ms)
        obj_ms = sum(res.object_ms.values())
        if res.object_ms:
            summary.object_ms.append(obj_ms)
        timing_rows.append((scan.k, res.static_ms, obj_ms, total_ms, len(scan.points)))

        if scene is not None:
            if scan.k >= scene.frames:
                raise ValueError(f"frame {scan.k}: scene has only {scene.frames} frames")
            for obj in scene.objects:
                rep = reports[obj.id]
                sub = registry.submaps.get(obj.id)
                covered = 0
                if sub is not None and obj.id in caches:
                    verts = caches[obj.id].mesh().vertices
                    gt_local = world_to_local(sub.pose, se3_apply(obj.poses[scan.k], gt_points[obj.id]))
                    covered = int(covered_mask(verts, gt_local, rep.lambda_cover).sum())
                rep.add(scan.k, covered)

        if cfg.mesh_every and (n + 1) % cfg.mesh_every == 0:
            summary.outputs += _write_meshes(registry, caches, mesh_dir, f"{scan.k:06d}")
        summary.frames += 1

    summary.outputs += _write_meshes(registry, caches, mesh_dir, "final")
    summary.outputs += save_registry(registry, out / "maps")
    summary.maps = registry.map_ids()
    if scene is not None:
        # All objects together: covered and total summed per frame.
        combined = CoverageReport(total=sum(r.total for r in reports.values()) or 1, lambda_cover=cfg.lambda_cover)
        if reports:
            first = next(iter(reports.values()))
            for n, k in enumerate(first.frames):
                combined.add(k, sum(r.covered[n] for r in reports.values()))
        combined.write_csv(out / "coverage.csv")
        summary.outputs.append(out / "coverage.csv")
    for j, rep in reports.items():
        p = out / f"coverage_{j}.csv"
        rep.write_csv(p)
        summary.outputs.append(p)
        summary.coverage[j] = rep.r_cov[-1] if rep.covered else 0.0
    if scene is not None and registry.last_k is not None:
        for obj in scene.objects:
            sub = registry.submaps.get(obj.id)
            if sub is None or obj.id not in caches:
                continue
            verts = caches[obj.id].mesh().vertices
            if len(verts) == 0:
                continue
            body = world_to_local(obj.poses[registry.last_k], se3_apply(sub.pose, verts))
            r = mesh_rmse(body, obj.sdf)
            p = out / f"rmse_{obj.id}.csv"
            write_rmse_csv(p, len(verts), r)
            summary.rmse[obj.id] = r
            summary.outputs.append(p)

    # Timing goes to non-CSV files: it differs between otherwise identical runs.
    with open(out / "timing.log", "w") as f:
        f.write("frame\tstatic_ms\tobject_ms\ttotal_ms\tpoints\n")
        for k, s_ms, o_ms, t_ms, npts in timing_rows:
            f.write(f"{k}\t{s_ms:.3f}\t{o_ms:.3f}\t{t_ms:.3f}\t{npts}\n")
    stats = {"frames": summary.frames, "static_ms": timing_stats(summary.static_ms), "object_ms": timing_stats(summary.object_ms)}
    (out / "timing_summary.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")

    if figures:
        from . import plots

        if reports:
            summary.outputs.append(plots.plot_coverage(reports, out / "coverage.png"))
        summary.outputs.append(plots.plot_timing([r[0] for r in timing_rows], [r[1] for r in timing_rows], [r[2] for r in timing_rows], out / "timing.png"))

    marker.unlink()
    return summary


def map_scene(cfg: RunConfig, scene: Scene, out_dir, figures: bool = True) -> RunSummary:
    return run_mapping(cfg, (scan for scan, _ in iter_scans(scene)), out_dir, scene=scene, figures=figures)


def load_run_config(path) -> RunConfig:
    p = Path(path)
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{p}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(d)


def read_timing_log(path) -> list[tuple]:
    with open(path) as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or rows[0] != ["frame", "static_ms", "object_ms", "total_ms", "points"]:
        raise ValueError(f"{path}: not a timing log")
    return [(int(r[0]), float(r[1]), float(r[2]), float(r[3]), int(r[4])) for r in rows[1:]]
