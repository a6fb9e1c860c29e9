import math

import numpy as np
import pytest

from dynvox.config import FusionConfig, SubmapPolicy
from dynvox.geometry import Pose, propagate_pose, se3_apply, world_to_local
from dynvox.simulator import scene_from_dict, step
from dynvox.submaps import (
    STATIC_ID,
    MapRegistry,
    MissingMotionError,
    Scan,
    TimestepError,
    create_submap,
    integrate_object_scan,
    load_registry,
    observe_scan,
    partition_scan,
    propagate_submap,
    save_registry,
)
from dynvox.voxel_grid import VoxelState

CFG = FusionConfig(voxel_size=0.1)


def scan(k, pts, labels, motions=None, pose=None):
    return Scan(k, pose or Pose.identity(), np.asarray(pts, float), np.asarray(labels), motions or {})


def test_partition_examples():
    s, g = partition_scan(scan(0, [[1, 0, 0], [2, 0, 0]], [0, 0]))
    assert len(s) == 2 and g == {}
    s, g = partition_scan(scan(0, [[1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]], [0, 3, 3, 7]))
    assert len(s) == 1 and len(g[3]) == 2 and len(g[7]) == 1
    s, _ = partition_scan(scan(0, [[0, 0, 0]], [0], pose=Pose.from_translation([1, 0, 0])))
    assert np.allclose(s, [[1, 0, 0]])


def test_create_submap_examples():
    sub = create_submap(1, [[1, 0, 0], [3, 0, 0]], 0, 0.1)
    assert np.allclose(sub.pose.translation, [2, 0, 0]) and np.array_equal(sub.pose.rotation, np.eye(3))
    sub = create_submap(2, [[0.3, -1, 2]], 0, 0.1)
    assert np.allclose(sub.pose.translation, [0.3, -1, 2])
    sub = create_submap(3, [[1, 2, 3], [-1, -2, -3]], 0, 0.1)
    assert np.allclose(sub.pose.translation, 0)
    assert np.allclose(world_to_local(create_submap(4, [[5, 6, 7]], 0, 0.1).pose, [5, 6, 7]), 0)
    with pytest.raises(ValueError):
        create_submap(0, [[1, 0, 0]], 0, 0.1)


def test_propagate_examples():
    sub = create_submap(1, [[1, 0, 0]], 0, 0.1)
    integrate_object_scan(sub, np.array([[1.0, 0, 0], [1.0, 0.05, 0]]), Pose.identity(), CFG)
    digest = sub.grid.digest()
    propagate_submap(sub, Pose.identity(), 1)
    assert np.allclose(sub.pose.translation, [1, 0, 0]) and len(sub.pose_history) == 2
    for k in range(2, 12):
        propagate_submap(sub, Pose.from_translation([0.1, 0, 0]), k)
    assert np.allclose(sub.pose.translation, [2, 0, 0], atol=1e-12)
    assert sub.grid.digest() == digest
    with pytest.raises(TimestepError):
        propagate_submap(sub, Pose.identity(), 11)
    sub = create_submap(1, [[2, 0, 0]], 0, 0.1)
    propagate_submap(sub, Pose.rot_z(math.pi / 2), 1)
    assert np.allclose(sub.pose.translation, [0, 2, 0], atol=1e-12)


def box_face(rng, n=1500):
    y, z = rng.uniform(-0.5, 0.5, (2, n))
    return np.column_stack([np.full(n, -0.3), y, z])  # body frame


def test_moving_object_is_still_in_body_frame(rng):
    body = box_face(rng)
    H = Pose.from_rotvec([0.0, 0.0, 0.05], [0.1, 0.02, 0.0])
    L = Pose.from_translation([3.0, 0.0, 1.0])
    sensor = Pose.identity()
    world = se3_apply(L, body)
    sub = create_submap(1, world, 0, 0.1)
    first_local = world_to_local(sub.pose, world)
    integrate_object_scan(sub, world, sensor, CFG)
    keys0, mu0, w0, _ = sub.grid.known()
    for k in range(1, 6):
        L = propagate_pose(L, H)
        sensor = propagate_pose(sensor, H)
        world = se3_apply(L, body)
        propagate_submap(sub, H, k)
        assert np.max(np.abs(world_to_local(sub.pose, world) - first_local)) < 1e-9
    integrate_object_scan(sub, world, sensor, CFG)
    keys1, mu1, w1, _ = sub.grid.known()
    assert np.array_equal(keys0, keys1)
    assert np.max(np.abs(mu1 - mu0)) < 1e-9
    assert np.allclose(w1, 2 * w0)


def test_observe_static_only_dirties_static():
    reg = MapRegistry(0.1)
    res = observe_scan(reg, scan(0, [[2, 0, 0], [2, 0.05, 0]], [0, 0]), CFG)
    assert set(res.dirty) == {STATIC_ID} and res.dirty[STATIC_ID]
    assert reg.submaps == {}


def test_observe_creates_submap_at_centroid():
    reg = MapRegistry(0.1)
    res = observe_scan(reg, scan(0, [[2, 0, 0], [3, 1, 0], [3, -1, 0], [3, 0, 1]], [0, 5, 5, 5]), CFG)
    assert res.created == [5]
    assert np.allclose(reg.submaps[5].pose.translation, [3, 0, 1 / 3])
    assert reg.map_ids() == [0, 5]


def test_strict_missing_motion_leaves_registry_intact():
    reg = MapRegistry(0.1)
    observe_scan(reg, scan(0, [[2, 0, 0], [3, 0, 0]], [0, 5]), CFG)
    before = (reg.static_map.digest(), reg.submaps[5].grid.digest(), len(reg.submaps[5].pose_history))
    with pytest.raises(MissingMotionError, match="frame 1"):
        observe_scan(reg, scan(1, [[2, 0, 0], [3, 0, 0]], [0, 5]), CFG)
    assert (reg.static_map.digest(), reg.submaps[5].grid.digest(), len(reg.submaps[5].pose_history)) == before
    assert reg.last_k == 0


def test_lenient_missing_motion_holds_pose():
    reg = MapRegistry(0.1, SubmapPolicy(missing_motion="lenient"))
    observe_scan(reg, scan(0, [[2, 0, 0], [3, 0, 0]], [0, 5]), CFG)
    digest = reg.submaps[5].grid.digest()
    res = observe_scan(reg, scan(1, [[2, 0, 0], [3.2, 0, 0]], [0, 5]), CFG)
    assert res.held == [5]
    assert reg.submaps[5].grid.digest() == digest
    assert len(reg.submaps[5].pose_history) == 1


def test_timestep_must_increase():
    reg = MapRegistry(0.1)
    observe_scan(reg, scan(3, [[2, 0, 0]], [0]), CFG)
    with pytest.raises(TimestepError):
        observe_scan(reg, scan(3, [[2, 0, 0]], [0]), CFG)


def test_retire_after_unseen():
    reg = MapRegistry(0.1, SubmapPolicy(retire_after=2))
    observe_scan(reg, scan(0, [[3, 0, 0]], [5]), CFG)
    for k in range(1, 4):
        observe_scan(reg, scan(k, [[2, 0, 0]], [0]), CFG)
    assert reg.submaps[5].retired
    with pytest.raises(MissingMotionError, match="retired"):
        observe_scan(reg, scan(4, [[3, 0, 0]], [5], {5: Pose.identity()}), CFG)


def test_unseen_object_keeps_following_motions():
    reg = MapRegistry(0.1)
    observe_scan(reg, scan(0, [[3, 0, 0]], [5]), CFG)
    observe_scan(reg, scan(1, [[2, 0, 0]], [0], {5: Pose.from_translation([0.5, 0, 0])}), CFG)
    assert np.allclose(reg.submaps[5].pose.translation, [3.5, 0, 0])


def follow_scene(frames=8):
    motion = {"type": "constant", "translation": [0.07, 0.01, 0.0], "rotvec": [0.0, 0.0, 0.03]}
    obj = {"id": 2, "shapes": [{"type": "box", "center": [0, 0, 0], "half_extents": [0.4, 0.3, 0.25]}], "initial_pose": {"translation": [2.0, 0.0, 0.5]}, "trajectory": motion}
    d = {"frames": frames, "sensor": {"width": 60, "height": 45, "hfov_deg": 60, "vfov_deg": 45}, "objects": [obj]}
    tmp = scene_from_dict({**d, "sensor_trajectory": {"type": "static", "pose": None}})
    # The sensor rides along with the object, so every scan is identical in its body frame.
    rel = Pose.from_translation([-2.0, 0.3, 0.6]) @ Pose.from_rotvec([0, 0.25, 0])
    poses = [(p @ rel).flat() for p in tmp.objects[0].poses]
    return scene_from_dict({**d, "sensor_trajectory": {"type": "poses", "poses": poses}})


def test_body_frame_occupancy_stable():
    sc = follow_scene()
    reg = MapRegistry(0.1)
    prev = None
    for k in range(sc.frames):
        observe_scan(reg, step(sc, k)[0], CFG)
        keys, _, _, st = reg.submaps[2].grid.known()
        occ = {tuple(x) for x in keys[st == VoxelState.OCCUPIED].tolist()}
        if prev is not None:
            assert occ == prev
        prev = occ


def test_pose_history_telescopes():
    sc = follow_scene()
    reg = MapRegistry(0.1)
    motions = []
    for k in range(sc.frames):
        s = step(sc, k)[0]
        motions.append(s.motions.get(2))
        observe_scan(reg, s, CFG)
    hist = reg.submaps[2].pose_history
    pose = hist[0][1]
    for (k, stored), H in zip(hist[1:], motions[1:]):
        pose = propagate_pose(pose, H)
        assert np.allclose(pose.matrix(), stored.matrix(), atol=1e-9, rtol=0)


def test_registry_round_trip(tmp_path):
    sc = follow_scene(4)
    reg = MapRegistry(0.1)
    for k in range(sc.frames):
        observe_scan(reg, step(sc, k)[0], CFG)
    save_registry(reg, tmp_path)
    back = load_registry(tmp_path)
    assert back.map_ids() == reg.map_ids()
    assert back.static_map.digest() == reg.static_map.digest()
    assert back.submaps[2].grid.digest() == reg.submaps[2].grid.digest()
    assert np.array_equal(back.submaps[2].pose.matrix(), reg.submaps[2].pose.matrix())
