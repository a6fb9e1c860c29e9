import json

import numpy as np

from dynvox.bench import MEASURED, WARMUP, bench_integration, downsample
from dynvox.scenes import preset
from dynvox.simulator import scene_from_dict, step


def test_protocol_defaults():
    assert WARMUP == 5 and MEASURED >= 50


def test_object_only_populates_object_stats(tmp_path):
    rep = bench_integration("object-only", measured=4, warmup=1, points=2000)
    s = rep.stats()
    assert s["frames"] == 4 and s["object_ms"]["count"] == 4
    # No static points: static integration is skipped.  Object rays still
    # carve free space into the static map, so its touched count is not zero.
    assert s["static_ms"]["mean"] < 1.0 and s["static_ms"]["mean"] < s["object_ms"]["mean"]
    written = rep.write(tmp_path, figures=False)
    assert json.loads(written[2].read_text())["scenario"] == "object-only"


def test_outdoor_populates_both():
    rep = bench_integration("outdoor-large", measured=2, warmup=0, points=6000)
    assert min(rep.touched_static) > 0 and min(rep.touched_objects) > 0
    assert all(t > 0 for t in rep.static_ms) and all(t > 0 for t in rep.object_ms)


def test_touched_counts_reproducible():
    a = bench_integration("object-only", measured=3, warmup=1, points=1500)
    b = bench_integration("object-only", measured=3, warmup=1, points=1500)
    assert a.touched_objects == b.touched_objects and a.touched_static == b.touched_static


def test_more_points_touch_more_voxels():
    small = bench_integration("outdoor-large", measured=2, warmup=0, points=3000)
    large = bench_integration("outdoor-large", measured=2, warmup=0, points=6000)
    assert np.mean(large.touched_static) > np.mean(small.touched_static)


def test_downsample():
    scan = step(scene_from_dict(preset("object-only", frames=1, points=1000)), 0)[0]
    half = downsample(scan, 2)
    assert np.array_equal(half.points, scan.points[::2]) and len(half.labels) == len(half.points)
    assert downsample(scan, 1) is scan
