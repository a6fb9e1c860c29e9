"""Static map plus one body-frame submap per moving object.

Each frame the static points are fused into the world-frame static map
(surface band and free space).  Object points go to their object's submap,
expressed in the body frame, surface band only.  Free space seen along the
rays that ended on an object is fused into the static map, which is what
clears the static map along the path an object has left.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FusionConfig, SubmapPolicy
from .fusion import _check_grid, free_codes, fuse_at, integrate_field
from .geometry import Motion, Pose, propagate_pose, se3_apply, world_to_local
from .local_field import build_local_field
from .voxel_grid import SparseGrid, decode_keys, load_snapshot, save_snapshot, voxel_center

log = logging.getLogger(__name__)

STATIC_ID = 0


class MissingMotionError(RuntimeError):
    pass


class TimestepError(ValueError):
    pass


@dataclass
class Scan:
    """One labelled point scan in the sensor frame."""

    k: int
    sensor_pose: Pose
    points: np.ndarray
    labels: np.ndarray
    motions: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        labels = np.asarray(self.labels)
        if labels.shape != (len(self.points),):
            raise ValueError(f"frame {self.k}: {len(self.points)} points but labels of shape {labels.shape}")
        if len(labels) and (labels.dtype.kind not in "iu" or labels.min() < 0):
            raise ValueError(f"frame {self.k}: labels must be non-negative integers")
        self.labels = labels.astype(np.int64)
        if not isinstance(self.sensor_pose, Pose):
            raise TypeError(f"frame {self.k}: sensor_pose must be a Pose")
        for j, m in self.motions.items():
            if not isinstance(m, Pose):
                raise TypeError(f"frame {self.k}: motion for object {j} must be a Pose")
        self.motions = {int(j): m for j, m in self.motions.items()}

    def object_ids(self) -> list[int]:
        return sorted(int(j) for j in np.unique(self.labels) if j != STATIC_ID)


@dataclass
class Submap:
    id: int
    grid: SparseGrid
    pose: Pose
    pose_history: list = field(default_factory=list)  # [(k, Pose)]
    last_seen: int = 0
    retired: bool = False

    @property
    def last_timestep(self) -> int:
        return self.pose_history[-1][0]


@dataclass
class MapRegistry:
    voxel_size: float
    policy: SubmapPolicy = field(default_factory=SubmapPolicy)
    static_map: SparseGrid = None
    submaps: dict = field(default_factory=dict)
    last_k: int | None = None

    def __post_init__(self):
        if self.static_map is None:
            self.static_map = SparseGrid(self.voxel_size)

    def map_ids(self) -> list[int]:
        return [STATIC_ID] + sorted(self.submaps)

    def grid(self, map_id: int) -> SparseGrid:
        return self.static_map if map_id == STATIC_ID else self.submaps[map_id].grid

    def pose(self, map_id: int) -> Pose:
        return Pose.identity() if map_id == STATIC_ID else self.submaps[map_id].pose


@dataclass
class ObserveResult:
    dirty: dict  # map id -> list of leaf origins
    static_ms: float = 0.0
    object_ms: dict = field(default_factory=dict)
    created: list = field(default_factory=list)
    held: list = field(default_factory=list)
    touched: dict = field(default_factory=dict)  # map id -> voxels fused this frame


def partition_scan(scan: Scan) -> tuple[np.ndarray, dict]:
    """World-frame static points and ``{object id: world points}``."""
    world = se3_apply(scan.sensor_pose, scan.points) if len(scan.points) else np.zeros((0, 3))
    static = world[scan.labels == STATIC_ID]
    groups = {j: world[scan.labels == j] for j in scan.object_ids()}
    return static, groups


def create_submap(object_id: int, world_points, timestep: int, voxel_size: float) -> Submap:
    pts = np.asarray(world_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError(f"cannot create submap {object_id} from no points")
    if object_id == STATIC_ID:
        raise ValueError("id 0 is reserved for the static map")
    pose = Pose.from_translation(pts.mean(axis=0))
    return Submap(object_id, SparseGrid(voxel_size), pose, [(timestep, pose)], last_seen=timestep)


def propagate_submap(submap: Submap, motion: Motion, timestep: int) -> Submap:
    if timestep <= submap.last_timestep:
        raise TimestepError(f"submap {submap.id}: timestep {timestep} not after {submap.last_timestep}")
    before = len(submap.grid)
    submap.pose = propagate_pose(submap.pose, motion)
    submap.pose_history.append((timestep, submap.pose))
    assert len(submap.grid) == before
    return submap


def integrate_object_scan(submap: Submap, world_points, sensor_pose: Pose, cfg: FusionConfig, carve: bool = False) -> list:
    """Fuse object points into the submap in its body frame; returns dirty leaves."""
    return _integrate_object(submap, world_points, sensor_pose, cfg, carve)[0]


def _integrate_object(submap, world_points, sensor_pose, cfg, carve):
    local = world_to_local(submap.pose, np.asarray(world_points, dtype=float).reshape(-1, 3))
    local = local[np.all(np.isfinite(local), axis=1)]
    if len(local) == 0:
        return [], 0
    sensor_local = world_to_local(submap.pose, sensor_pose.translation)
    _check_grid(submap.grid, cfg)
    field = build_local_field(local, sensor_local, cfg)
    codes = integrate_field(submap.grid, field, cfg, free_space=carve)
    return submap.grid.drain_dirty_leaves(), len(codes)


def _fuse_object_free_space(static_map: SparseGrid, static_field, sensor, obj_points, skip: np.ndarray, cfg: FusionConfig):
    """Fuse the free samples of rays that ended on an object into the static map.

    Distances come from this frame's static field, taken as positive since
    the samples lie on observed rays; without static points the sample is
    taken to be ``max_range`` from any surface.
    """
    codes = free_codes(sensor, obj_points, cfg)
    codes = codes[~np.isin(codes, skip, assume_unique=True)]
    if len(codes) == 0:
        return codes
    centers = voxel_center(decode_keys(codes), cfg.voxel_size)
    if static_field is not None:
        d, sigma = static_field.query(centers)
        d = np.abs(d)
    else:
        d = np.full(len(codes), cfg.max_range)
        r = np.linalg.norm(centers - sensor, axis=1)
        sigma = np.minimum(cfg.sigma_max, cfg.sigma_range_coeff * r / cfg.max_range)
    fuse_at(static_map, codes, d, sigma, cfg)
    return codes


def observe_scan(registry: MapRegistry, scan: Scan, cfg: FusionConfig) -> ObserveResult:
    """Integrate one labelled scan into the registry."""
    _check_grid(registry.static_map, cfg)
    k = scan.k
    if registry.last_k is not None and k <= registry.last_k:
        raise TimestepError(f"frame {k}: timestep must exceed previous frame {registry.last_k}")
    policy = registry.policy
    static_pts, groups = partition_scan(scan)
    sensor = scan.sensor_pose.translation

    # Validate before mutating anything so a strict failure leaves the registry intact.
    held = []
    for j in groups:
        sub = registry.submaps.get(j)
        if sub is None:
            continue
        if sub.retired:
            msg = f"frame {k}: object {j} reappeared after its submap was retired"
        elif j not in scan.motions:
            msg = f"frame {k}: object {j} observed without a motion"
        else:
            continue
        if policy.missing_motion == "strict":
            raise MissingMotionError(msg)
        log.warning("%s; holding its pose and skipping integration", msg)
        held.append(j)

    result = ObserveResult(dirty={}, held=held)
    t0 = time.perf_counter()
    static_field = None
    fused = np.zeros(0, dtype=np.int64)
    in_range = static_pts[np.linalg.norm(static_pts - sensor, axis=1) <= cfg.max_range] if len(static_pts) else static_pts
    if len(in_range):
        static_field = build_local_field(in_range, sensor, cfg)
        fused = integrate_field(registry.static_map, static_field, cfg)
    result.static_ms = (time.perf_counter() - t0) * 1e3

    for j, pts in groups.items():
        t0 = time.perf_counter()
        pts = pts[np.linalg.norm(pts - sensor, axis=1) <= cfg.max_range]
        if len(pts) == 0:
            continue
        carved = _fuse_object_free_space(registry.static_map, static_field, sensor, pts, fused, cfg)
        fused = np.union1d(fused, carved)
        if j in held:
            result.object_ms[j] = (time.perf_counter() - t0) * 1e3
            continue
        sub = registry.submaps.get(j)
        if sub is None:
            sub = create_submap(j, pts, k, registry.voxel_size)
            registry.submaps[j] = sub
            result.created.append(j)
        else:
            propagate_submap(sub, scan.motions[j], k)
        sub.last_seen = k
        result.dirty[j], result.touched[j] = _integrate_object(sub, pts, scan.sensor_pose, cfg, policy.body_frame_carving)
        result.object_ms[j] = (time.perf_counter() - t0) * 1e3

    for j, sub in registry.submaps.items():
        if j in groups or sub.retired:
            continue
        if k - sub.last_seen > policy.retire_after:
            sub.retired = True
            log.info("frame %d: retiring submap %d (unseen since frame %d)", k, j, sub.last_seen)
        elif j in scan.motions:
            propagate_submap(sub, scan.motions[j], k)

    result.dirty[STATIC_ID] = registry.static_map.drain_dirty_leaves()
    result.touched[STATIC_ID] = len(fused)
    registry.last_k = k
    return result


# ---------------------------------------------------------------------------
# export

POSE_HEADER = ["k", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz"]


def write_pose_history(submap: Submap, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(POSE_HEADER)
        for k, pose in submap.pose_history:
            w.writerow([k] + [repr(float(v)) for v in pose.rotation.reshape(-1)] + [repr(float(v)) for v in pose.translation])


def read_pose_history(path) -> list:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != POSE_HEADER:
        raise ValueError(f"{path}: unexpected pose history header")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        try:
            vals = [float(v) for v in row[1:]]
            out.append((int(row[0]), Pose(np.reshape(vals[:9], (3, 3)), vals[9:12])))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{n}: malformed pose row") from exc
    return out


def save_registry(registry: MapRegistry, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "static_map.csv"]
    save_snapshot(registry.static_map, written[0])
    for j in sorted(registry.submaps):
        sub = registry.submaps[j]
        grid_path = out / f"submap_{j}.csv"
        pose_path = out / f"poses_{j}.csv"
        save_snapshot(sub.grid, grid_path)
        write_pose_history(sub, pose_path)
        written += [grid_path, pose_path]
    return written


def load_registry(in_dir, policy: SubmapPolicy | None = None) -> MapRegistry:
    src = Path(in_dir)
    static = load_snapshot(src / "static_map.csv")
    reg = MapRegistry(static.voxel_size, policy or SubmapPolicy(), static_map=static)
    for grid_path in sorted(src.glob("submap_*.csv")):
        j = int(grid_path.stem.split("_", 1)[1])
        history = read_pose_history(src / f"poses_{j}.csv")
        if not history:
            raise ValueError(f"{src}: submap {j} has an empty pose history")
        sub = Submap(j, load_snapshot(grid_path, static.voxel_size), history[-1][1], history, last_seen=history[-1][0])
        reg.submaps[j] = sub
    return reg
