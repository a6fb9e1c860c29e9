import math

import numpy as np
import pytest

from dynvox.geometry import Pose, propagate_pose, se3_apply, world_to_local
from dynvox.scenes import coverage_scene, corridor_scene
from dynvox.simulator import Box, OccupancyGrid, SceneError, Sphere, gt_free_space, scene_from_dict, step

SMALL = {"width": 40, "height": 30, "hfov_deg": 60.0, "vfov_deg": 45.0, "max_range": 20.0}


def wall_scene(x=2.0, **extra):
    d = {
        "frames": 3,
        "sensor": SMALL,
        "static": [{"type": "plane", "point": [x, 0, 0], "normal": [-1.0, 0, 0]}],
        "sensor_trajectory": {"type": "static", "pose": None},
    }
    d.update(extra)
    return d


def test_plane_hits():
    scan, _ = step(scene_from_dict(wall_scene()), 0)
    world = se3_apply(scan.sensor_pose, scan.points)
    assert len(world) == 40 * 30
    assert np.max(np.abs(world[:, 0] - 2.0)) < 1e-9
    assert np.all(scan.labels == 0)


def test_occluding_box_labelled():
    obj = {"id": 1, "shapes": [{"type": "box", "center": [0, 0, 0], "half_extents": [0.2, 0.3, 0.3]}], "initial_pose": {"translation": [1.0, 0, 0]}}
    scan, _ = step(scene_from_dict(wall_scene(objects=[obj])), 0)
    box = scan.labels == 1
    assert box.any() and (~box).any()
    assert np.all(np.linalg.norm(scan.points[box], axis=1) < 2.0)
    assert np.allclose(scan.points[box][:, 0], 0.8)


def test_constant_motion_echoed():
    obj = {
        "id": 4,
        "shapes": [{"type": "sphere", "center": [0, 0, 0], "radius": 0.2}],
        "initial_pose": {"translation": [1.5, 0, 0]},
        "trajectory": {"type": "constant", "translation": [0.1, 0, 0]},
    }
    sc = scene_from_dict(wall_scene(objects=[obj]))
    for k in (1, 2):
        scan, _ = step(sc, k)
        H = scan.motions[4]
        assert np.array_equal(H.rotation, np.eye(3)) and np.array_equal(H.translation, [0.1, 0, 0])
    assert step(sc, 0)[0].motions == {}


def test_motions_telescope_to_poses():
    sc = scene_from_dict(coverage_scene(frames=40))
    obj = sc.objects[0]
    pose = obj.initial_pose
    for k in range(1, sc.frames):
        pose = propagate_pose(pose, step(sc, k)[0].motions[obj.id])
        assert np.allclose(pose.matrix(), obj.poses[k].matrix(), atol=1e-12, rtol=0)


def test_labels_exact():
    sc = scene_from_dict(corridor_scene())
    for k in (0, 10, 19):
        scan, _ = step(sc, k)
        world = se3_apply(scan.sensor_pose, scan.points)
        obj = sc.objects[0]
        on_obj = np.abs(obj.sdf(world_to_local(obj.poses[k], world)))
        static = np.min([np.abs(s.sdf(world)) for s in sc.static], axis=0)
        assert np.all(on_obj[scan.labels == 1] < 1e-6)
        assert np.all(static[scan.labels == 0] < 1e-6)


def test_deterministic_with_noise():
    d = wall_scene(noise_std=0.01, seed=5)
    a, _ = step(scene_from_dict(d), 1)
    b, _ = step(scene_from_dict(d), 1)
    assert np.array_equal(a.points, b.points)
    c, _ = step(scene_from_dict({**d, "seed": 6}), 1)
    assert not np.array_equal(a.points, c.points)


def test_primitive_meshes():
    m = Box([0, 0, 0], [0.5, 0.5, 0.5]).mesh()
    assert len(m.triangles) == 12 and len(m.vertices) == 8
    assert np.allclose(np.abs(m.vertices), 0.5)
    assert math.isclose(m.areas().sum(), 6.0)
    assert len(m.boundary_edges()) == 0
    s = Sphere([1, 2, 3], 0.7, subdivisions=12).mesh()
    assert np.max(np.abs(np.linalg.norm(s.vertices - [1, 2, 3], axis=1) - 0.7)) < 1e-9
    assert len(s.boundary_edges()) == 0


def test_compound_mesh_is_union():
    sc = scene_from_dict(coverage_scene(frames=2))
    obj = sc.objects[0]
    m = obj.mesh()
    assert len(m.triangles) == sum(len(s.mesh().triangles) for s in obj.shapes)


def test_surface_points_on_outer_surface():
    obj = scene_from_dict(coverage_scene(frames=2)).objects[0]
    pts = obj.surface_points(0.05)
    assert np.all(np.abs(obj.sdf(pts)) < 1e-9)


def test_gt_free_space_examples():
    empty = scene_from_dict({"frames": 1, "sensor": SMALL, "sensor_trajectory": {"type": "static", "pose": None}})
    gt = gt_free_space(empty, [Pose.identity()], 0.5, ([-1, -3, -3], [6, 3, 3]))
    assert (gt.states == 2).sum() == 0 and (gt.states == 1).sum() > 0
    # Directly ahead within range and field of view.
    assert gt.states[tuple(np.array([6, 0, 0]) - gt.lo)] == 1

    wall = scene_from_dict(wall_scene(x=2.2))
    gt = gt_free_space(wall, [Pose.identity()], 0.5, ([-1, -3, -3], [6, 3, 3]))
    assert gt.keys(1)[:, 0].max() < 4  # nothing at or behind the wall is free
    assert np.all(gt.keys(2)[:, 0] == 4)  # the voxel layer holding the wall
    assert gt.states[tuple(np.array([5, 0, 0]) - gt.lo)] == 0

    # A wall on a voxel boundary lies in both adjacent layers.
    gt = gt_free_space(scene_from_dict(wall_scene(x=2.0)), [Pose.identity()], 0.5, ([-1, -3, -3], [6, 3, 3]))
    assert set(gt.keys(2)[:, 0].tolist()) == {3, 4}


def test_occupancy_round_trip(tmp_path):
    gt = gt_free_space(scene_from_dict(wall_scene()), [Pose.identity()], 0.5, ([-1, -3, -3], [6, 3, 3]))
    gt.save(tmp_path / "gt.csv")
    back = OccupancyGrid.load(tmp_path / "gt.csv")
    assert np.array_equal(back.states, gt.states) and np.array_equal(back.lo, gt.lo)


def test_scene_errors():
    with pytest.raises(SceneError):
        scene_from_dict({"sensor": SMALL})
    with pytest.raises(SceneError):
        scene_from_dict(wall_scene(objects=[{"id": 0, "shapes": []}]))
    with pytest.raises(SceneError):
        scene_from_dict(wall_scene(static=[{"type": "torus"}]))
    with pytest.raises(IndexError):
        step(scene_from_dict(wall_scene()), 3)
