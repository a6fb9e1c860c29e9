"""Deterministic scene simulator: rigid bodies, a pinhole depth sensor, ground truth.

Scenes are built from planes, boxes and spheres.  Objects carry a body-frame
list of shapes plus a trajectory; each frame the sensor casts one ray per
pixel and keeps the nearest hit.  Hits are labelled with the id of the
object they struck (0 for static geometry) and returned in the sensor frame
together with the exact world-frame object motions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .geometry import Motion, Pose, look_at, motion_from_pose_pair, propagate_pose, se3_apply, world_to_local
from .meshing import TriangleMesh
from .submaps import Scan
from .voxel_grid import voxel_key_for

_EPS = 1e-9


class SceneError(ValueError):
    pass


# ---------------------------------------------------------------------------
# primitives


@dataclass
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)

    def intersect(self, o, d):
        denom = d @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.point - o) @ self.normal) / denom
        return np.where((np.abs(denom) > 1e-15) & (t > _EPS), t, np.inf)

    def sdf(self, p):
        return (np.asarray(p, dtype=float) - self.point) @ self.normal

    def to_dict(self):
        return {"type": "plane", "point": self.point.tolist(), "normal": self.normal.tolist()}


@dataclass
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        self.rotation = Pose(self.rotation, self.center).rotation
        if np.any(self.half_extents <= 0):
            raise SceneError("box half extents must be positive")

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.center)

    def intersect(self, o, d):
        lo_ = world_to_local(self.pose, o)
        ld = d @ self.rotation
        h = self.half_extents
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-h - lo_) / ld
            t2 = (h - lo_) / ld
        tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
        # Rays parallel to a slab and outside it never hit.
        parallel_miss = (ld == 0) & (np.abs(lo_) > h)
        tnear = tmin.max(axis=-1)
        tfar = tmax.min(axis=-1)
        hit = (tnear <= tfar) & (tfar > _EPS) & ~parallel_miss.any(axis=-1)
        t = np.where(tnear > _EPS, tnear, tfar)
        return np.where(hit, t, np.inf)

    def sdf(self, p):
        q = np.abs(world_to_local(self.pose, p)) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def mesh(self) -> TriangleMesh:
        signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
        verts = se3_apply(self.pose, signs * self.half_extents)
        # Vertex index = 4*x + 2*y + z with x, y, z in {0, 1}; outward winding.
        quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
        tris = []
        for a, b, c, e in quads:
            tris += [(a, b, c), (a, c, e)]
        return TriangleMesh(verts, np.array(tris))

    def sample_surface(self, spacing):
        pts = []
        h = self.half_extents
        for axis in range(3):
            u, v = [a for a in range(3) if a != axis]
            nu = max(int(math.ceil(2 * h[u] / spacing)), 1)
            nv = max(int(math.ceil(2 * h[v] / spacing)), 1)
            gu = np.linspace(-h[u], h[u], nu + 1)
            gv = np.linspace(-h[v], h[v], nv + 1)
            U, V = np.meshgrid(gu, gv, indexing="ij")
            for sign in (-1.0, 1.0):
                face = np.zeros((U.size, 3))
                face[:, u] = U.ravel()
                face[:, v] = V.ravel()
                face[:, axis] = sign * h[axis]
                pts.append(face)
        local = np.unique(np.concatenate(pts), axis=0)
        return se3_apply(self.pose, local)

    def to_dict(self):
        return {
            "type": "box",
            "center": self.center.tolist(),
            "half_extents": self.half_extents.tolist(),
            "rotation": self.rotation.reshape(-1).tolist(),
        }


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    subdivisions: int = 16

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not self.radius > 0:
            raise SceneError("sphere radius must be positive")

    def intersect(self, o, d):
        oc = o - self.center
        b = d @ oc if oc.ndim == 1 else np.einsum("ij,ij->i", d, oc)
        c = (oc @ oc if oc.ndim == 1 else np.einsum("ij,ij->i", oc, oc)) - self.radius ** 2
        a = np.einsum("ij,ij->i", d, d)
        disc = b * b - a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = (-b - sq) / a
        t2 = (-b + sq) / a
        t = np.where(t1 > _EPS, t1, t2)
        return np.where((disc >= 0) & (t > _EPS), t, np.inf)

    def sdf(self, p):
        return np.linalg.norm(np.asarray(p, dtype=float) - self.center, axis=-1) - self.radius

    def mesh(self) -> TriangleMesh:
        n = max(int(self.subdivisions), 3)
        theta = np.linspace(0.0, np.pi, n + 1)[1:-1]
        phi = np.linspace(0.0, 2 * np.pi, 2 * n, endpoint=False)
        T, P = np.meshgrid(theta, phi, indexing="ij")
        ring = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
        unit = np.vstack([[0.0, 0.0, 1.0], ring, [0.0, 0.0, -1.0]])
        verts = self.center + self.radius * unit
        m = 2 * n
        rows = n - 1
        tris = []
        for j in range(m):
            tris.append((0, 1 + j, 1 + (j + 1) % m))
        for i in range(rows - 1):
            for j in range(m):
                a = 1 + i * m + j
                b = 1 + i * m + (j + 1) % m
                c = 1 + (i + 1) * m + j
                e = 1 + (i + 1) * m + (j + 1) % m
                tris += [(a, c, e), (a, e, b)]
        last = len(verts) - 1
        base = 1 + (rows - 1) * m
        for j in range(m):
            tris.append((last, base + (j + 1) % m, base + j))
        return TriangleMesh(verts, np.array(tris))

    def sample_surface(self, spacing):
        count = max(int(math.ceil(4 * np.pi * self.radius ** 2 / spacing ** 2)), 1)
        i = np.arange(count) + 0.5
        z = 1.0 - 2.0 * i / count
        r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        phi = np.pi * (1.0 + 5 ** 0.5) * i
        unit = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
        return self.center + self.radius * unit

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius, "subdivisions": self.subdivisions}


def shape_from_dict(d: dict):
    kind = d.get("type")
    if kind == "plane":
        return Plane(d["point"], d["normal"])
    if kind == "box":
        rot = np.asarray(d["rotation"], dtype=float).reshape(3, 3) if "rotation" in d else _yaw(d.get("yaw_deg", 0.0))
        return Box(d["center"], d["half_extents"], rot)
    if kind == "sphere":
        return Sphere(d["center"], float(d["radius"]), int(d.get("subdivisions", 16)))
    raise SceneError(f"unknown shape type {kind!r}")


def _yaw(deg):
    return Pose.rot_z(math.radians(deg)).rotation


# ---------------------------------------------------------------------------
# scene


@dataclass
class SensorModel:
    width: int = 160
    height: int = 120
    hfov_deg: float = 90.0
    vfov_deg: float = 60.0
    max_range: float = 20.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise SceneError("sensor resolution must be positive")
        if not (0 < self.hfov_deg < 180 and 0 < self.vfov_deg < 180):
            raise SceneError("field of view must be in (0, 180) degrees")

    def ray_directions(self) -> np.ndarray:
        """Unit directions in the sensor frame (x forward, y left, z up), row-major."""
        u = (np.arange(self.width) + 0.5) / self.width
        v = (np.arange(self.height) + 0.5) / self.height
        ty = math.tan(math.radians(self.hfov_deg) / 2) * (1.0 - 2.0 * u)
        tz = math.tan(math.radians(self.vfov_deg) / 2) * (1.0 - 2.0 * v)
        Z, Y = np.meshgrid(tz, ty, indexing="ij")
        d = np.stack([np.ones_like(Y), Y, Z], axis=-1).reshape(-1, 3)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def to_dict(self):
        return {
            "width": self.width,
            "height": self.height,
            "hfov_deg": self.hfov_deg,
            "vfov_deg": self.vfov_deg,
            "max_range": self.max_range,
        }


@dataclass
class SceneObject:
    id: int
    shapes: list
    initial_pose: Pose
    motions: list  # motions[k] moves the object from frame k-1 to k; motions[0] unused
    poses: list = field(default_factory=list)

    def mesh(self) -> TriangleMesh:
        return TriangleMesh.concatenate([s.mesh() for s in self.shapes])

    def sdf(self, p_body) -> np.ndarray:
        return np.min([s.sdf(p_body) for s in self.shapes], axis=0)

    def surface_points(self, spacing: float) -> np.ndarray:
        """Body-frame samples of the outer surface of the shape union.

        Samples of one shape that lie inside another, or on a face shared
        with another (so no outside point is adjacent), are dropped.
        """
        pts = np.concatenate([s.sample_surface(spacing) for s in self.shapes])
        pts = pts[self.sdf(pts) >= -1e-9]
        step = 1e-4
        outside = np.zeros(len(pts), dtype=bool)
        for axis in range(3):
            for sign in (-1.0, 1.0):
                q = pts.copy()
                q[:, axis] += sign * step
                outside |= self.sdf(q) > 0
        return np.unique(pts[outside], axis=0)


@dataclass
class Scene:
    frames: int
    sensor: SensorModel
    sensor_poses: list
    static: list = field(default_factory=list)
    objects: list = field(default_factory=list)
    noise_std: float = 0.0
    seed: int = 0
    name: str = "scene"

    def __post_init__(self):
        if self.frames < 1:
            raise SceneError("frames must be >= 1")
        ids = [o.id for o in self.objects]
        if any(i < 1 for i in ids) or len(set(ids)) != len(ids):
            raise SceneError("object ids must be unique and >= 1")
        if len(self.sensor_poses) != self.frames:
            raise SceneError("need one sensor pose per frame")

    def object(self, object_id: int) -> SceneObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise SceneError(f"unknown object id {object_id}")


def _pose_from_spec(spec) -> Pose:
    if spec is None:
        return Pose.identity()
    if isinstance(spec, (list, tuple)):
        return Pose.from_matrix(spec)
    R = _yaw(spec.get("yaw_deg", 0.0))
    if "rotvec" in spec:
        R = Pose.from_rotvec(spec["rotvec"]).rotation
    return Pose(R, spec.get("translation", (0.0, 0.0, 0.0)))


def _object_motions(spec: dict, initial: Pose, frames: int) -> list:
    traj = spec.get("trajectory", {"type": "static"})
    kind = traj.get("type")
    ident = Pose.identity()
    if kind == "static":
        return [ident] * frames
    if kind == "constant":
        H = Pose.from_rotvec(traj.get("rotvec", (0.0, 0.0, 0.0)), traj.get("translation", (0.0, 0.0, 0.0)))
        return [ident] + [H] * (frames - 1)
    if kind == "motions":
        ms = [Pose.from_matrix(m) for m in traj["motions"]]
        if len(ms) != frames - 1:
            raise SceneError(f"object {spec.get('id')}: need {frames - 1} motions")
        return [ident] + ms
    if kind == "linear":
        # Translate at constant velocity while yawing about the body origin.
        v = np.asarray(traj.get("velocity", (0.0, 0.0, 0.0)), dtype=float)
        rate = math.radians(traj.get("yaw_rate_deg", 0.0))
        t0 = initial.translation
        poses = [Pose(Pose.rot_z(rate * k).rotation @ initial.rotation, t0 + v * k) for k in range(frames)]
        return [ident] + [motion_from_pose_pair(poses[k - 1], poses[k]) for k in range(1, frames)]
    if kind == "poses":
        poses = [Pose.from_matrix(p) for p in traj["poses"]]
        if len(poses) != frames:
            raise SceneError(f"object {spec.get('id')}: need {frames} poses")
        return [ident] + [motion_from_pose_pair(poses[k - 1], poses[k]) for k in range(1, frames)]
    raise SceneError(f"unknown trajectory type {kind!r}")


def _sensor_poses(spec: dict, frames: int, objects: list) -> list:
    kind = spec.get("type", "static")
    if kind == "static":
        return [_pose_from_spec(spec.get("pose"))] * frames
    if kind == "poses":
        poses = [Pose.from_matrix(p) for p in spec["poses"]]
        if len(poses) != frames:
            raise SceneError(f"sensor trajectory needs {frames} poses")
        return poses
    if kind == "look_at":
        eyes = np.asarray(spec["eyes"], dtype=float)
        targets = np.asarray(spec["targets"], dtype=float)
        if len(eyes) != frames or len(targets) != frames:
            raise SceneError("look_at trajectory needs one eye and target per frame")
        return [look_at(e, t) for e, t in zip(eyes, targets)]
    if kind == "orbit":
        target = spec.get("target", (0.0, 0.0, 0.0))
        follow = None
        if isinstance(target, dict):
            follow = next(o for o in objects if o.id == target["object"])
        radius = float(spec.get("radius", 4.0))
        revs = float(spec.get("revolutions", 1.0))
        e_min = math.radians(spec.get("elevation_min_deg", 20.0))
        e_max = math.radians(spec.get("elevation_max_deg", 20.0))
        cycles = float(spec.get("elevation_cycles", 1.0))
        phase = math.radians(spec.get("azimuth_start_deg", 0.0))
        poses = []
        for k in range(frames):
            c = follow.poses[k].translation if follow is not None else np.asarray(target, dtype=float)
            s = k / max(frames - 1, 1)
            az = phase + 2 * math.pi * revs * s
            el = 0.5 * (e_min + e_max) + 0.5 * (e_max - e_min) * math.sin(2 * math.pi * cycles * s)
            eye = c + radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
            poses.append(look_at(eye, c))
        return poses
    raise SceneError(f"unknown sensor trajectory type {kind!r}")


def scene_from_dict(d: dict) -> Scene:
    try:
        frames = int(d["frames"])
        sensor = SensorModel(**d.get("sensor", {}))
        static = [shape_from_dict(s) for s in d.get("static", [])]
        objects = []
        for od in d.get("objects", []):
            initial = _pose_from_spec(od.get("initial_pose"))
            motions = _object_motions(od, initial, frames)
            obj = SceneObject(int(od["id"]), [shape_from_dict(s) for s in od["shapes"]], initial, motions)
            obj.poses = _telescope(initial, motions)
            objects.append(obj)
        poses = _sensor_poses(d.get("sensor_trajectory", {}), frames, objects)
    except KeyError as exc:
        raise SceneError(f"scene is missing field {exc}") from exc
    return Scene(
        frames=frames,
        sensor=sensor,
        sensor_poses=poses,
        static=static,
        objects=objects,
        noise_std=float(d.get("noise_std", 0.0)),
        seed=int(d.get("seed", 0)),
        name=str(d.get("name", "scene")),
    )


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))


def _telescope(initial: Pose, motions: list) -> list:
    poses = [initial]
    for H in motions[1:]:
        poses.append(propagate_pose(poses[-1], H))
    return poses


# ---------------------------------------------------------------------------
# rendering


@dataclass
class FrameTruth:
    k: int
    sensor_pose: Pose
    object_poses: dict
    hit_shape: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def raycast(scene: Scene, k: int, origin, directions, include_objects: bool = True):
    """Nearest hit per ray at frame ``k``: (distance, label); misses have inf."""
    directions = np.asarray(directions, dtype=float)
    origin = np.asarray(origin, dtype=float)
    best = np.full(len(directions), np.inf)
    label = np.zeros(len(directions), dtype=np.int64)
    for s in scene.static:
        t = s.intersect(origin, directions)
        closer = t < best
        best[closer] = t[closer]
        label[closer] = 0
    if include_objects:
        for obj in scene.objects:
            pose = obj.poses[k]
            o_b = world_to_local(pose, origin)
            d_b = directions @ pose.rotation
            for s in obj.shapes:
                t = s.intersect(o_b, d_b)
                closer = t < best
                best[closer] = t[closer]
                label[closer] = obj.id
    return best, label


def step(scene: Scene, k: int) -> tuple[Scan, FrameTruth]:
    if not 0 <= k < scene.frames:
        raise IndexError(f"frame {k} out of range [0, {scene.frames})")
    pose = scene.sensor_poses[k]
    dirs_s = scene.sensor.ray_directions()
    dirs_w = dirs_s @ pose.rotation.T
    t, label = raycast(scene, k, pose.translation, dirs_w)
    hit = t <= scene.sensor.max_range
    t, label, dirs_s = t[hit], label[hit], dirs_s[hit]
    if scene.noise_std > 0:
        rng = np.random.default_rng([scene.seed, k])
        t = t + rng.normal(0.0, scene.noise_std, size=t.shape)
    points = dirs_s * t[:, None]
    motions = {} if k == 0 else {o.id: o.motions[k] for o in scene.objects}
    scan = Scan(k=k, sensor_pose=pose, points=points, labels=label, motions=motions)
    truth = FrameTruth(k=k, sensor_pose=pose, object_poses={o.id: o.poses[k] for o in scene.objects})
    return scan, truth


def iter_scans(scene: Scene):
    for k in range(scene.frames):
        yield step(scene, k)


def export_gt_mesh(scene: Scene, object_id: int) -> TriangleMesh:
    """Body-frame triangulation of an object's shapes."""
    return scene.object(object_id).mesh()


# ---------------------------------------------------------------------------
# ground-truth free space


@dataclass
class OccupancyGrid:
    """Dense voxel states (0 unknown, 1 free, 2 occupied) over a box of keys."""

    voxel_size: float
    lo: np.ndarray  # key of states[0, 0, 0]
    states: np.ndarray

    def keys(self, state: int) -> np.ndarray:
        return np.argwhere(self.states == state) + self.lo

    def centers(self, state: int) -> np.ndarray:
        return (self.keys(state) + 0.5) * self.voxel_size

    def save(self, path) -> None:
        path = Path(path)
        rows = ["i,j,k,state"]
        names = {1: "free", 2: "occupied"}
        for s in (1, 2):
            for i, j, k in self.keys(s).tolist():
                rows.append(f"{i},{j},{k},{names[s]}")
        path.write_text("\n".join(rows) + "\n")
        path.with_suffix(".json").write_text(
            json.dumps({"voxel_size": self.voxel_size, "lo": self.lo.tolist(), "shape": list(self.states.shape)}, indent=2) + "\n"
        )

    @classmethod
    def load(cls, path) -> "OccupancyGrid":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        lo = np.asarray(meta["lo"], dtype=np.int64)
        states = np.zeros(meta["shape"], dtype=np.int8)
        codes = {"free": 1, "occupied": 2}
        lines = path.read_text().splitlines()
        if not lines or lines[0] != "i,j,k,state":
            raise ValueError(f"{path}: unexpected header")
        for n, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            try:
                idx = np.array([int(v) for v in parts[:3]]) - lo
                states[tuple(idx)] = codes[parts[3]]
            except (ValueError, KeyError, IndexError) as exc:
                raise ValueError(f"{path}:{n}: malformed row {line!r}") from exc
        return cls(float(meta["voxel_size"]), lo, states)


def _cells_containing_surface(shapes, voxel_size, lo, shape):
    """Cells a static surface passes through: corner SDF min <= 0 < max."""
    ax = [(lo[a] + np.arange(shape[a] + 1)) * voxel_size for a in range(3)]
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    corners = np.stack([X, Y, Z], axis=-1)
    out = np.zeros(shape, dtype=bool)
    for s in shapes:
        f = s.sdf(corners.reshape(-1, 3)).reshape(X.shape)
        stacked = np.stack(
            [f[i : i + shape[0], j : j + shape[1], k : k + shape[2]] for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        )
        out |= (stacked.min(axis=0) <= 0) & (stacked.max(axis=0) > 0)
    return out


def gt_free_space(scene: Scene, sample_poses, voxel_size: float, bounds, sensor: SensorModel | None = None) -> OccupancyGrid:
    """Free space seen from ``sample_poses`` against static geometry only.

    ``bounds`` is ``(min_xyz, max_xyz)`` in meters.  Voxels crossed by an
    unobstructed ray are free; voxels a static surface passes through, or
    that hold a ray hit, are occupied; everything else is unknown.
    """
    sensor = sensor or scene.sensor
    lo = voxel_key_for(bounds[0], voxel_size)
    hi = voxel_key_for(bounds[1], voxel_size)
    shape = tuple(int(v) for v in hi - lo + 1)
    free = np.zeros(shape, dtype=np.int8)
    occupied = _cells_containing_surface(scene.static, voxel_size, lo, shape)
    dirs_s = sensor.ray_directions()
    for pose in sample_poses:
        dirs = dirs_s @ pose.rotation.T
        t, _ = raycast(scene, 0, pose.translation, dirs, include_objects=False)
        hit = t <= sensor.max_range
        t = np.where(hit, t, sensor.max_range)
        ends = pose.translation + dirs * t[:, None]
        origins = np.repeat(pose.translation[None, :], len(dirs), axis=0)
        _kernels.traverse_rays(origins, ends, hit, voxel_size, lo, free)
        hk = voxel_key_for(ends[hit], voxel_size) - lo
        inside = np.all((hk >= 0) & (hk < np.array(shape)), axis=1)
        hk = hk[inside]
        occupied[hk[:, 0], hk[:, 1], hk[:, 2]] = True
    states = np.where(free > 0, 1, 0).astype(np.int8)
    states[occupied] = 2
    return OccupancyGrid(voxel_size, lo, states)
