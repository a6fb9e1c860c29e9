"""Preset scene descriptions (plain dicts, loadable with ``scene_from_dict``)."""

from __future__ import annotations

import math

import numpy as np

from .geometry import look_at


def car_shapes() -> list[dict]:
    """A coarse car: body, cabin and four wheels as boxes, in the body frame."""
    shapes = [
        {"type": "box", "center": [0.0, 0.0, 0.0], "half_extents": [1.0, 0.45, 0.25]},
        {"type": "box", "center": [-0.15, 0.0, 0.4], "half_extents": [0.5, 0.4, 0.15]},
    ]
    for x in (-0.6, 0.6):
        for y in (-0.47, 0.47):
            shapes.append({"type": "box", "center": [x, y, -0.25], "half_extents": [0.18, 0.08, 0.18]})
    return shapes


def coverage_scene(frames: int = 120, seed: int = 0) -> dict:
    """A flying sensor orbiting a slowly driving car from all angles."""
    return {
        "name": "coverage",
        "frames": frames,
        "seed": seed,
        "sensor": {"width": 120, "height": 90, "hfov_deg": 70.0, "vfov_deg": 55.0, "max_range": 20.0},
        "objects": [
            {
                "id": 1,
                "shapes": car_shapes(),
                "initial_pose": {"translation": [0.0, 0.0, 1.0], "yaw_deg": 0.0},
                "trajectory": {"type": "linear", "velocity": [0.02, 0.005, 0.0], "yaw_rate_deg": 0.5},
            }
        ],
        "sensor_trajectory": {
            "type": "orbit",
            "target": {"object": 1},
            "radius": 4.0,
            "revolutions": 2.0,
            "elevation_min_deg": -60.0,
            "elevation_max_deg": 70.0,
            "elevation_cycles": 1.5,
        },
    }


def corridor_scene(frames: int = 20, seed: int = 0) -> dict:
    """A corridor with a floating box crossing it while a fixed sensor watches."""
    return {
        "name": "corridor",
        "frames": frames,
        "seed": seed,
        "sensor": {"width": 160, "height": 100, "hfov_deg": 90.0, "vfov_deg": 60.0, "max_range": 20.0},
        "static": [
            {"type": "plane", "point": [0.0, 0.0, 0.0], "normal": [0.0, 0.0, 1.0]},
            {"type": "plane", "point": [0.0, 2.0, 0.0], "normal": [0.0, -1.0, 0.0]},
            {"type": "plane", "point": [0.0, -2.0, 0.0], "normal": [0.0, 1.0, 0.0]},
            {"type": "plane", "point": [8.0, 0.0, 0.0], "normal": [-1.0, 0.0, 0.0]},
        ],
        "objects": [
            {
                "id": 1,
                "shapes": [{"type": "box", "center": [0.0, 0.0, 0.0], "half_extents": [0.3, 0.3, 0.3]}],
                "initial_pose": {"translation": [4.5, -1.4, 1.2]},
                "trajectory": {"type": "constant", "translation": [0.0, 0.14, 0.0]},
            }
        ],
        "sensor_trajectory": {"type": "static", "pose": look_at([0.0, 0.0, 1.2], [5.0, 0.0, 1.0]).flat()},
    }


# Room surfaces pass through voxel centres of the 20 cm grid used with it, so
# "voxel contains a surface" is unambiguous for the ground truth.
ROOM_OFFSET = 0.1
ROOM_HALF = (3.0, 2.0)
ROOM_HEIGHT = 2.6
# 1 m slice on voxel boundaries: the five 20 cm layers with centres 0.9 ... 1.7 m.
ROOM_SLICE = (0.8, 1.8)


def room_scene(seed: int = 0) -> dict:
    """A closed room with a pillar and a table-like block; one sensor frame per sample pose."""
    poses = room_sample_poses()
    hx, hy = ROOM_HALF
    o = ROOM_OFFSET
    return {
        "name": "room",
        "frames": len(poses),
        "seed": seed,
        "sensor": {"width": 180, "height": 120, "hfov_deg": 100.0, "vfov_deg": 70.0, "max_range": 20.0},
        "static": [
            {"type": "plane", "point": [0.0, 0.0, o], "normal": [0.0, 0.0, 1.0]},
            {"type": "plane", "point": [0.0, 0.0, o + ROOM_HEIGHT], "normal": [0.0, 0.0, -1.0]},
            {"type": "plane", "point": [o + hx, 0.0, 0.0], "normal": [-1.0, 0.0, 0.0]},
            {"type": "plane", "point": [o - hx, 0.0, 0.0], "normal": [1.0, 0.0, 0.0]},
            {"type": "plane", "point": [0.0, o + hy, 0.0], "normal": [0.0, -1.0, 0.0]},
            {"type": "plane", "point": [0.0, o - hy, 0.0], "normal": [0.0, 1.0, 0.0]},
            {"type": "box", "center": [o + 1.6, o + 0.8, o + 1.3], "half_extents": [0.2, 0.2, 1.3]},
            {"type": "box", "center": [o - 1.4, o - 0.6, o + 0.4], "half_extents": [0.6, 0.4, 0.4]},
        ],
        "objects": [],
        "sensor_trajectory": {"type": "poses", "poses": [p.flat() for p in poses]},
    }


def room_sample_poses() -> list:
    out = []
    o = ROOM_OFFSET
    eyes = [(-2.0, 1.2), (0.0, 1.3), (2.2, -1.2), (0.2, -1.3), (-2.2, -1.4), (2.4, 1.4), (-0.6, 0.2), (0.8, 0.0)]
    for n, (x, y) in enumerate(eyes):
        az = 2 * math.pi * n / len(eyes) + 0.4
        eye = np.array([x + o, y + o, 1.3 + o])
        out.append(look_at(eye, eye + np.array([math.cos(az), math.sin(az), -0.05])))
    return out


def room_bounds() -> tuple:
    """Grid bounds for ground-truth free space around the room."""
    return ([-3.6, -2.6, -0.4], [3.8, 2.8, 3.2])


def object_only_scene(frames: int = 60, points: int = 5000, seed: int = 0) -> dict:
    """One moving box filling the view: every point is an object point."""
    width = int(round(math.sqrt(points * 4 / 3)))
    height = int(round(points / width))
    return {
        "name": "object-only",
        "frames": frames,
        "seed": seed,
        "sensor": {"width": width, "height": height, "hfov_deg": 40.0, "vfov_deg": 30.0, "max_range": 20.0},
        "objects": [
            {
                "id": 1,
                "shapes": [{"type": "box", "center": [0.0, 0.0, 0.0], "half_extents": [0.3, 4.0, 3.0]}],
                "initial_pose": {"translation": [4.0, 0.0, 0.0]},
                "trajectory": {"type": "linear", "velocity": [0.0, 0.01, 0.0], "yaw_rate_deg": 0.2},
            }
        ],
        "sensor_trajectory": {"type": "static", "pose": None},
    }


def outdoor_large_scene(frames: int = 60, points: int = 50000, seed: int = 0) -> dict:
    """A covered 25 m street: ground, facades, roof, end wall, parked boxes and one driving car.

    Every surface lies within sensor range so nearly every ray returns a point;
    all but a few percent of them are static.
    """
    width = int(round(math.sqrt(points * 2)))
    height = int(round(points / width))
    static = [
        {"type": "plane", "point": [0.0, 0.0, 0.0], "normal": [0.0, 0.0, 1.0]},
        {"type": "plane", "point": [0.0, 0.0, 6.0], "normal": [0.0, 0.0, -1.0]},
        {"type": "plane", "point": [0.0, 6.0, 0.0], "normal": [0.0, -1.0, 0.0]},
        {"type": "plane", "point": [0.0, -6.0, 0.0], "normal": [0.0, 1.0, 0.0]},
        {"type": "plane", "point": [24.0, 0.0, 0.0], "normal": [-1.0, 0.0, 0.0]},
    ]
    rng = np.random.default_rng(7)
    for n in range(8):
        x = 4.0 + 2.4 * n
        y = float(rng.choice([-4.5, 4.5]))
        static.append({"type": "box", "center": [x, y, 0.75], "half_extents": [0.9, 0.5, 0.75], "yaw_deg": float(rng.uniform(-20, 20))})
    return {
        "name": "outdoor-large",
        "frames": frames,
        "seed": seed,
        "sensor": {"width": width, "height": height, "hfov_deg": 100.0, "vfov_deg": 50.0, "max_range": 25.0},
        "static": static,
        "objects": [
            {
                "id": 1,
                "shapes": car_shapes(),
                "initial_pose": {"translation": [5.0, -2.0, 0.43]},
                "trajectory": {"type": "linear", "velocity": [0.12, 0.0, 0.0], "yaw_rate_deg": 0.0},
            }
        ],
        "sensor_trajectory": {
            "type": "look_at",
            "eyes": [[0.1 * k, 0.0, 1.6] for k in range(frames)],
            "targets": [[0.1 * k + 10.0, 0.0, 1.0] for k in range(frames)],
        },
    }


PRESETS = {
    "coverage": coverage_scene,
    "corridor": corridor_scene,
    "room": room_scene,
    "object-only": object_only_scene,
    "outdoor-large": outdoor_large_scene,
}


def preset(name: str, **kwargs) -> dict:
    try:
        return PRESETS[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
