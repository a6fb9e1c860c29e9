"""Command-line interface: simulate, map, eval, export-mesh, bench."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import FusionConfig, RunConfig
from .scenes import PRESETS, preset


def _defaults_text() -> str:
    cfg = RunConfig()
    lines = ["run config defaults (JSON keys; fusion values left null follow voxel_size):"]
    for k, v in cfg.to_dict().items():
        if isinstance(v, dict):
            for kk, vv in v.items():
                lines.append(f"  {k}.{kk} = {json.dumps(vv)}")
        else:
            lines.append(f"  {k} = {json.dumps(v)}")
    lines.append("  derived: fusion.truncation = 2*voxel_size, fusion.surface_band = (sqrt(3)/2)*voxel_size,")
    lines.append("           fusion.free_threshold = voxel_size, coverage lambda = (sqrt(3)/2)*voxel_size")
    return "\n".join(lines)


def _scene_dict(arg: str, seed: int | None = None, frames: int | None = None) -> dict:
    """A scene JSON file, or the name of a preset."""
    p = Path(arg)
    if p.exists():
        d = json.loads(p.read_text())
        if frames is not None:
            d["frames"] = frames
    elif arg in PRESETS:
        # Presets build per-frame trajectories, so the frame count goes to the builder.
        d = preset(arg, frames=frames) if frames is not None else preset(arg)
    else:
        raise FileNotFoundError(f"scene {arg!r} is neither a file nor a preset ({', '.join(sorted(PRESETS))})")
    if seed is not None:
        d["seed"] = seed
    return d


def _run_config(path: str | None) -> RunConfig:
    from .io import load_run_config

    return load_run_config(path) if path else RunConfig()


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    from .io import write_scan_stream
    from .meshing import write_ply
    from .eval import write_points_csv
    from .geometry import se3_apply
    from .simulator import gt_free_space, iter_scans, scene_from_dict

    d = _scene_dict(args.scene, args.seed, args.frames)
    scene = scene_from_dict(d)
    out = Path(args.out)
    n = write_scan_stream((s for s, _ in iter_scans(scene)), out, scene_dict=d, extra={"sensor": scene.sensor.to_dict(), "name": scene.name})
    last = scene.frames - 1
    for obj in scene.objects:
        write_ply(obj.mesh().transformed(obj.poses[last]), out / f"gt_mesh_{obj.id}.ply")
        write_points_csv(se3_apply(obj.poses[last], obj.surface_points(args.gt_spacing)), out / f"gt_surface_{obj.id}.csv")
    if args.gt_freespace is not None:
        if args.bounds is None:
            raise ValueError("--gt-freespace needs --bounds")
        b = args.bounds
        gt = gt_free_space(scene, scene.sensor_poses, args.gt_freespace, (b[:3], b[3:]))
        gt.save(out / "gt_freespace.csv")
    print(f"wrote {n} frames to {out}")
    return 0


def cmd_map(args) -> int:
    from .io import load_scan_stream, load_stream_scene, map_scene, run_mapping
    from .simulator import scene_from_dict

    cfg = _run_config(args.config)
    if args.scene:
        summary = map_scene(cfg, scene_from_dict(_scene_dict(args.scene, args.seed)), args.out, figures=not args.no_figures)
    else:
        scene = load_stream_scene(args.dataset)
        summary = run_mapping(cfg, load_scan_stream(args.dataset), args.out, scene=scene, figures=not args.no_figures)
    print(f"mapped {summary.frames} frames into {len(summary.maps)} maps -> {args.out}")
    for j, c in sorted(summary.coverage.items()):
        print(f"  object {j}: final coverage {c:.4f}")
    return 0


def _load_vertices(path: str) -> np.ndarray:
    from .eval import read_points_csv
    from .meshing import read_ply

    return read_ply(path).vertices if path.endswith(".ply") else read_points_csv(path)


def cmd_eval(args) -> int:
    from .eval import CoverageReport, covered_mask, default_lambda, free_space_compare, mesh_rmse, read_points_csv, write_rmse_csv

    if args.what == "coverage":
        gt = read_points_csv(args.gt)
        lam = args.lambda_cover if args.lambda_cover is not None else default_lambda(args.voxel_size)
        rep = CoverageReport(total=len(gt), lambda_cover=lam)
        rep.add(args.frame, int(covered_mask(_load_vertices(args.recon), gt, lam).sum()))
        rep.write_csv(args.out)
        print(f"coverage {rep.r_cov[-1]:.6f}")
    elif args.what == "rmse":
        verts = _load_vertices(args.mesh)
        r = mesh_rmse(verts, read_points_csv(args.gt))
        write_rmse_csv(args.out, len(verts), r)
        print(f"rmse {r:.6f}")
    elif args.what == "freespace":
        from .simulator import OccupancyGrid
        from .voxel_grid import load_snapshot

        recon = load_snapshot(args.recon)
        gt = OccupancyGrid.load(args.gt)
        rep = free_space_compare(recon, gt, (args.z_min, args.z_max))
        rep.write_csv(args.out)
        if not args.no_figures:
            from .plots import plot_freespace_slice

            plot_freespace_slice(recon, gt, 0.5 * (args.z_min + args.z_max), Path(args.out).with_suffix(".png"))
        print(f"tp {rep.tp} fn {rep.fn} fp {rep.fp} unknown {rep.unknown}")
    elif args.what == "esdf-batch":
        from .esdf import query_esdf_batch
        from .submaps import load_registry

        reg = load_registry(args.maps)
        q = read_points_csv(args.queries)
        dist, weight, known = query_esdf_batch(reg, q, args.truncation)
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["x", "y", "z", "distance", "weight", "known"])
            for p, dd, ww, kk in zip(q.tolist(), dist.tolist(), weight.tolist(), known.tolist()):
                w.writerow([repr(p[0]), repr(p[1]), repr(p[2]), repr(dd) if kk else "", repr(ww), int(kk)])
        print(f"{int(known.sum())} of {len(q)} queries known")
    return 0


def cmd_export_mesh(args) -> int:
    from .meshing import extract_mesh, write_ply
    from .submaps import read_pose_history
    from .voxel_grid import load_snapshot

    mesh = extract_mesh(load_snapshot(args.map))
    if args.poses:
        history = read_pose_history(args.poses)
        if not history:
            raise ValueError(f"{args.poses}: empty pose history")
        mesh = mesh.transformed(history[-1][1])
    write_ply(mesh, args.out)
    print(f"{len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .bench import PRESET_FUSION, bench_integration

    fusion = None
    if args.config:
        fusion = _run_config(args.config).fusion
    elif args.voxel_size is not None:
        fusion = FusionConfig(**{**PRESET_FUSION.get(args.preset, {}), "voxel_size": args.voxel_size})
    rep = bench_integration(args.preset, fusion, measured=args.frames, warmup=args.warmup, keep_every=args.keep_every, points=args.points)
    rep.write(args.out, figures=not args.no_figures)
    print(rep.summary_text())
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(
        prog="dynvox",
        description="Volumetric mapping of static scenes and moving rigid objects.",
        epilog=_defaults_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a scene into a scan stream", formatter_class=fmt)
    s.add_argument("--scene", required=True, help=f"scene JSON file or preset ({', '.join(sorted(PRESETS))})")
    s.add_argument("--out", required=True, help="output stream directory")
    s.add_argument("--seed", type=int, default=None, help="override the scene seed (noise)")
    s.add_argument("--frames", type=int, default=None, help="override the frame count")
    s.add_argument("--gt-spacing", type=float, default=0.02, help="spacing of ground-truth surface samples [m]")
    s.add_argument("--gt-freespace", type=float, default=None, metavar="VOXEL", help="also write ground-truth free space at this voxel size, seen from the sensor poses")
    s.add_argument("--bounds", type=float, nargs=6, default=None, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"), help="ground-truth free-space grid bounds [m]")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("map", help="run the mapping pipeline", formatter_class=fmt, epilog=_defaults_text())
    src = m.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene JSON file or preset, simulated on the fly")
    src.add_argument("--dataset", help="scan stream directory (manifest.json + frame_*.json)")
    m.add_argument("--config", default=None, help="run config JSON (see defaults below)")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--seed", type=int, default=None, help="override the scene seed (with --scene)")
    m.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    m.set_defaults(func=cmd_map)

    e = sub.add_parser("eval", help="evaluation reports")
    esub = e.add_subparsers(dest="what", required=True)
    c = esub.add_parser("coverage", help="fraction of gt points near the reconstruction", formatter_class=fmt)
    c.add_argument("--recon", required=True, help="reconstruction mesh (.ply) or x,y,z CSV")
    c.add_argument("--gt", required=True, help="ground-truth x,y,z CSV")
    c.add_argument("--voxel-size", type=float, default=0.1, help="sets the default lambda")
    c.add_argument("--lambda", dest="lambda_cover", type=float, default=None, help="coverage radius [m]; default (sqrt(3)/2)*voxel_size")
    c.add_argument("--frame", type=int, default=0, help="frame number written to the CSV row")
    c.add_argument("--out", required=True, help="CSV frame,covered,total,r_cov")
    r = esub.add_parser("rmse", help="RMS distance from mesh vertices to gt points", formatter_class=fmt)
    r.add_argument("--mesh", required=True, help="reconstruction mesh (.ply) or x,y,z CSV")
    r.add_argument("--gt", required=True, help="ground-truth x,y,z CSV")
    r.add_argument("--out", required=True, help="CSV vertices,rmse")
    f = esub.add_parser("freespace", help="free-space TP/FN/FP against ground truth", formatter_class=fmt)
    f.add_argument("--recon", required=True, help="grid snapshot CSV (i,j,k,mu,weight,state)")
    f.add_argument("--gt", required=True, help="ground-truth occupancy CSV (i,j,k,state)")
    f.add_argument("--z-min", type=float, required=True, help="slice bottom [m] (voxel centre height)")
    f.add_argument("--z-max", type=float, required=True, help="slice top [m]")
    f.add_argument("--out", required=True, help="CSV tp,fn,fp,unknown (a PNG slice is written next to it)")
    f.add_argument("--no-figures", action="store_true", help="skip the PNG slice")
    q = esub.add_parser("esdf-batch", help="distance queries across all maps", formatter_class=fmt)
    q.add_argument("--maps", required=True, help="map directory written by 'map' (the maps/ subdirectory)")
    q.add_argument("--queries", required=True, help="x,y,z CSV of world-frame queries")
    q.add_argument("--truncation", type=float, default=0.2, help="bounding-box dilation [m]")
    q.add_argument("--out", required=True, help="CSV x,y,z,distance,weight,known")
    for parser in (c, r, f, q):
        parser.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-mesh", help="marching-cubes mesh of a grid snapshot", formatter_class=fmt)
    x.add_argument("--map", required=True, help="grid snapshot CSV")
    x.add_argument("--poses", default=None, help="pose-history CSV; places a submap mesh at its last pose")
    x.add_argument("--out", required=True, help="output ASCII PLY")
    x.set_defaults(func=cmd_export_mesh)

    b = sub.add_parser("bench", help="time scan integration on a preset", formatter_class=fmt)
    b.add_argument("--preset", required=True, choices=["object-only", "outdoor-large"])
    b.add_argument("--config", default=None, help="run config JSON; its fusion section is used")
    b.add_argument("--voxel-size", type=float, default=None, help="override the preset voxel size (0.1 object-only, 0.2 outdoor-large)")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--frames", type=int, default=50, help="measured frames")
    b.add_argument("--warmup", type=int, default=5, help="unmeasured warmup frames")
    b.add_argument("--keep-every", type=int, default=1, help="keep every n-th point of each scan")
    b.add_argument("--points", type=int, default=None, help="points per scan (preset default: 5000 / 50000)")
    b.add_argument("--no-figures", action="store_true", help="skip the PNG")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
