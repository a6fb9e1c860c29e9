import json

import numpy as np
import pytest

from dynvox.cli import build_parser, main
from dynvox.eval import read_coverage_csv, read_freespace_csv, read_rmse_csv, write_points_csv
from dynvox.meshing import read_ply
from dynvox.simulator import OccupancyGrid
from dynvox.voxel_grid import save_snapshot
from test_io import small_scene


def run(*argv):
    return main([str(a) for a in argv])


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["map", "--help"])
    out = capsys.readouterr().out
    for key in ["fusion.voxel_size = 0.1", "fusion.max_range = 20.0", "fusion.weight_cap", "policy.missing_motion", "mesh_every", "truncation = 2*voxel_size"]:
        assert key in out


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert run("map", "--dataset", tmp_path / "missing", "--out", tmp_path / "o") == 1
    assert "error:" in capsys.readouterr().err
    assert run("simulate", "--scene", "no-such-preset", "--out", tmp_path / "s") == 1


def test_pipeline(tmp_path):
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps(small_scene()))
    stream = tmp_path / "stream"
    assert run("simulate", "--scene", scene, "--out", stream, "--gt-freespace", 0.1, "--bounds", -1, -3, -1.5, 5, 3, 2) == 0
    assert (stream / "gt_freespace.csv").exists() and (stream / "gt_surface_3.csv").exists()
    out = tmp_path / "run"
    assert run("map", "--dataset", stream, "--out", out, "--no-figures") == 0
    assert read_coverage_csv(out / "coverage_3.csv").frames == list(range(6))

    assert run("eval", "freespace", "--recon", out / "maps" / "static_map.csv", "--gt", stream / "gt_freespace.csv", "--z-min", -0.5, "--z-max", 0.5, "--out", tmp_path / "fs.csv") == 0
    fs = read_freespace_csv(tmp_path / "fs.csv")
    assert fs["tp"] > 0
    assert (tmp_path / "fs.png").exists()

    q = tmp_path / "q.csv"
    write_points_csv(np.array([[2.0, 0.0, 0.0], [50.0, 50.0, 50.0]]), q)
    assert run("eval", "esdf-batch", "--maps", out / "maps", "--queries", q, "--out", tmp_path / "e.csv") == 0
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "x,y,z,distance,weight,known" and rows[2].endswith(",,0.0,0")

    mesh = tmp_path / "obj.ply"
    assert run("export-mesh", "--map", out / "maps" / "submap_3.csv", "--poses", out / "maps" / "poses_3.csv", "--out", mesh) == 0
    assert not read_ply(mesh).is_empty
    assert run("eval", "coverage", "--recon", mesh, "--gt", stream / "gt_surface_3.csv", "--out", tmp_path / "c.csv") == 0
    assert 0 < read_coverage_csv(tmp_path / "c.csv").r_cov[0] <= 1


def test_eval_trivial_cases(tmp_path, rng):
    pts = rng.normal(size=(100, 3))
    write_points_csv(pts, tmp_path / "p.csv")
    assert run("eval", "coverage", "--recon", tmp_path / "p.csv", "--gt", tmp_path / "p.csv", "--out", tmp_path / "c.csv") == 0
    assert read_coverage_csv(tmp_path / "c.csv").r_cov == [1.0]

    xs, ys = np.meshgrid(np.linspace(-1, 1, 21), np.linspace(-1, 1, 21))
    plane = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
    write_points_csv(plane, tmp_path / "gt.csv")
    write_points_csv(plane + [0, 0, 0.1], tmp_path / "mesh.csv")
    assert run("eval", "rmse", "--mesh", tmp_path / "mesh.csv", "--gt", tmp_path / "gt.csv", "--out", tmp_path / "r.csv") == 0
    assert abs(read_rmse_csv(tmp_path / "r.csv")[1] - 0.1) < 1e-12

    from test_eval import fs_fixture

    recon, gt = fs_fixture()
    save_snapshot(recon, tmp_path / "recon.csv")
    gt.save(tmp_path / "gt_fs.csv")
    assert run("eval", "freespace", "--recon", tmp_path / "recon.csv", "--gt", tmp_path / "gt_fs.csv", "--z-min", 0, "--z-max", 1, "--out", tmp_path / "f.csv", "--no-figures") == 0
    f = read_freespace_csv(tmp_path / "f.csv")
    assert f["fn"] == 0 and f["fp"] == 0 and f["tp"] == int((OccupancyGrid.load(tmp_path / "gt_fs.csv").states == 1).sum())


def test_eval_format_mismatch(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    assert run("eval", "coverage", "--recon", tmp_path / "bad.csv", "--gt", tmp_path / "bad.csv", "--out", tmp_path / "c.csv") == 1
    assert "x,y,z" in capsys.readouterr().err


def test_simulate_preset_frames(tmp_path):
    assert run("simulate", "--scene", "outdoor-large", "--frames", 2, "--out", tmp_path / "s") == 0
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["frames"] == 2


def test_bench_command(tmp_path):
    assert run("bench", "--preset", "object-only", "--frames", 3, "--warmup", 1, "--points", 800, "--out", tmp_path) == 0
    for ext in ("csv", "txt", "json", "png"):
        assert (tmp_path / f"bench_object-only.{ext}").exists()
