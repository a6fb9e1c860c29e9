"""Integration-time benchmark on deterministic preset scenes."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FusionConfig
from .io import timing_stats
from .scenes import preset
from .simulator import scene_from_dict, step
from .submaps import STATIC_ID, MapRegistry, Scan, observe_scan

WARMUP = 5
MEASURED = 50
# Published mean integration times per scan (hardware unstated).
REFERENCE_MS = {"object": 10.0, "static": 45.0}

# Per-preset defaults; anything here can be overridden by the caller's config.
PRESET_FUSION = {
    "object-only": {"voxel_size": 0.1, "max_range": 20.0},
    "outdoor-large": {"voxel_size": 0.2, "max_range": 25.0},
}


@dataclass
class BenchReport:
    scenario: str
    points_per_scan: float
    keep_every: int
    warmup: int
    frames: list = field(default_factory=list)
    static_ms: list = field(default_factory=list)
    object_ms: list = field(default_factory=list)
    points: list = field(default_factory=list)
    touched_static: list = field(default_factory=list)
    touched_objects: list = field(default_factory=list)

    def stats(self) -> dict:
        return {
            "scenario": self.scenario,
            "frames": len(self.frames),
            "warmup": self.warmup,
            "keep_every": self.keep_every,
            "points_per_scan": self.points_per_scan,
            "static_ms": timing_stats(self.static_ms),
            "object_ms": timing_stats(self.object_ms),
            "touched_static_mean": float(np.mean(self.touched_static)) if self.frames else 0.0,
            "touched_objects_mean": float(np.mean(self.touched_objects)) if self.frames else 0.0,
        }

    def summary_text(self) -> str:
        s = self.stats()
        lines = [f"scenario {self.scenario}: {s['frames']} measured frames after {self.warmup} warmup, "
                 f"{self.points_per_scan:.0f} points/scan (keep every {self.keep_every})"]
        for name in ("static_ms", "object_ms"):
            t = s[name]
            lines.append(f"  {name[:-3]:7s} mean {t['mean']:8.2f} ms  median {t['median']:8.2f} ms  p95 {t['p95']:8.2f} ms")
        lines.append(f"  touched voxels/frame: static {s['touched_static_mean']:.1f}, objects {s['touched_objects_mean']:.1f}")
        return "\n".join(lines)

    def write(self, out_dir, figures: bool = True) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"bench_{self.scenario}.csv"
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["frame", "points", "static_ms", "object_ms", "touched_static", "touched_objects"])
            for row in zip(self.frames, self.points, self.static_ms, self.object_ms, self.touched_static, self.touched_objects):
                w.writerow([row[0], row[1], f"{row[2]:.4f}", f"{row[3]:.4f}", row[4], row[5]])
        txt = out / f"bench_{self.scenario}.txt"
        txt.write_text(self.summary_text() + "\n")
        js = out / f"bench_{self.scenario}.json"
        js.write_text(json.dumps(self.stats(), indent=2, sort_keys=True) + "\n")
        written = [csv_path, txt, js]
        if figures:
            from .plots import plot_bench

            written.append(plot_bench(self.static_ms, self.object_ms, out / f"bench_{self.scenario}.png"))
        return written


def downsample(scan: Scan, keep_every: int) -> Scan:
    """Keep every ``keep_every``-th point of a scan."""
    if keep_every < 1:
        raise ValueError("keep_every must be >= 1")
    if keep_every == 1:
        return scan
    return Scan(scan.k, scan.sensor_pose, scan.points[::keep_every], scan.labels[::keep_every], scan.motions)


def bench_integration(
    name: str,
    fusion: FusionConfig | None = None,
    measured: int = MEASURED,
    warmup: int = WARMUP,
    keep_every: int = 1,
    points: int | None = None,
) -> BenchReport:
    """Replay a preset scene and time each ``observe_scan`` call.

    Scans are simulated up front so only integration is timed.
    """
    if measured < 1 or warmup < 0:
        raise ValueError("need measured >= 1 and warmup >= 0")
    kwargs = {"frames": warmup + measured}
    if points is not None:
        kwargs["points"] = points
    scene = scene_from_dict(preset(name, **kwargs))
    if fusion is None:
        fusion = FusionConfig(**PRESET_FUSION.get(name, {}))
    scans = [downsample(step(scene, k)[0], keep_every) for k in range(scene.frames)]
    registry = MapRegistry(fusion.voxel_size)
    rep = BenchReport(name, float(np.mean([len(s.points) for s in scans])), keep_every, warmup)
    for n, scan in enumerate(scans):
        res = observe_scan(registry, scan, fusion)
        if n < warmup:
            continue
        rep.frames.append(scan.k)
        rep.points.append(len(scan.points))
        rep.static_ms.append(res.static_ms)
        rep.object_ms.append(float(sum(res.object_ms.values())))
        rep.touched_static.append(int(res.touched.get(STATIC_ID, 0)))
        rep.touched_objects.append(int(sum(v for j, v in res.touched.items() if j != STATIC_ID)))
    return rep
