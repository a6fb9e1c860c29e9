"""Evaluation: surface coverage, mesh RMSE and free-space agreement."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kdtree import KDTree
from .meshing import TriangleMesh
from .simulator import OccupancyGrid
from .voxel_grid import SparseGrid, VoxelState

# Published results on real datasets, printed next to our numbers for
# comparison; none of them is expected to be reproduced by the simulator.
REFERENCE_COVERAGE = 0.961
REFERENCE_RMSE = (0.12, 0.17, 0.14)
REFERENCE_FREESPACE = {"tp": 3980, "fn": 16, "fp": 93, "gt_free": 5871}


def default_lambda(voxel_size: float) -> float:
    """Centre-to-corner distance of a voxel."""
    return math.sqrt(3.0) / 2.0 * voxel_size


def covered_mask(recon_vertices, gt_points, lam: float) -> np.ndarray:
    """Per gt point: is some reconstruction vertex strictly closer than ``lam``?"""
    gt = np.asarray(gt_points, dtype=float).reshape(-1, 3)
    if len(gt) == 0:
        raise ValueError("ground truth point set is empty")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    rec = np.asarray(recon_vertices, dtype=float).reshape(-1, 3)
    if len(rec) == 0:
        return np.zeros(len(gt), dtype=bool)
    d, _ = KDTree(rec).query(gt)
    return d < lam


def coverage(recon_vertices, gt_points, lam: float) -> float:
    m = covered_mask(recon_vertices, gt_points, lam)
    return int(m.sum()) / len(m)


@dataclass
class CoverageReport:
    total: int
    lambda_cover: float
    frames: list = field(default_factory=list)
    covered: list = field(default_factory=list)

    def add(self, frame: int, covered: int) -> None:
        if not 0 <= covered <= self.total:
            raise ValueError("covered count out of range")
        self.frames.append(int(frame))
        self.covered.append(int(covered))

    @property
    def r_cov(self) -> list[float]:
        return [c / self.total for c in self.covered]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["frame", "covered", "total", "r_cov"])
            for k, c in zip(self.frames, self.covered):
                w.writerow([k, c, self.total, repr(c / self.total)])


def read_coverage_csv(path) -> CoverageReport:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["frame", "covered", "total", "r_cov"]:
        raise ValueError(f"{path}: not a coverage CSV")
    total = int(rows[1][2]) if len(rows) > 1 else 1
    rep = CoverageReport(total=total, lambda_cover=float("nan"))
    for row in rows[1:]:
        rep.add(int(row[0]), int(row[1]))
    return rep


def mesh_rmse(mesh: TriangleMesh | np.ndarray, gt_surface) -> float:
    """RMS over mesh vertices of the distance to the ground-truth surface.

    ``gt_surface`` is either a dense ``(M, 3)`` point sample or a callable
    returning unsigned (or signed) distance per vertex.
    """
    verts = mesh.vertices if isinstance(mesh, TriangleMesh) else np.asarray(mesh, dtype=float).reshape(-1, 3)
    if len(verts) == 0:
        raise ValueError("mesh has no vertices")
    if callable(gt_surface):
        d = np.abs(np.asarray(gt_surface(verts), dtype=float))
    else:
        gt = np.asarray(gt_surface, dtype=float).reshape(-1, 3)
        if len(gt) == 0:
            raise ValueError("ground truth point set is empty")
        d, _ = KDTree(gt).query(verts)
    return float(np.sqrt(np.mean(d * d)))


def write_rmse_csv(path, vertices: int, rmse: float) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["vertices", "rmse"])
        w.writerow([int(vertices), repr(float(rmse))])


def read_rmse_csv(path) -> tuple[int, float]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) != 2 or rows[0] != ["vertices", "rmse"]:
        raise ValueError(f"{path}: not an RMSE CSV")
    return int(rows[1][0]), float(rows[1][1])


@dataclass
class FreeSpaceReport:
    tp: int
    fn: int
    fp: int
    unknown: int
    z_min: float
    z_max: float
    gt_free: int = 0
    gt_occupied: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["tp", "fn", "fp", "unknown"])
            w.writerow([self.tp, self.fn, self.fp, self.unknown])


def free_space_compare(recon: SparseGrid, gt: OccupancyGrid, z_slice: tuple[float, float]) -> FreeSpaceReport:
    """Compare reconstructed states with ground truth inside a height slice.

    A voxel is in the slice when its centre height lies in ``[z0, z1]``.
    Gt-free voxels count as TP (recon free), FN (recon occupied) or unknown;
    gt-occupied voxels that the reconstruction calls free are FP.
    """
    if not math.isclose(recon.voxel_size, gt.voxel_size, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"voxel size mismatch: recon {recon.voxel_size} vs gt {gt.voxel_size}")
    z0, z1 = z_slice
    vs = gt.voxel_size

    def in_slice(keys):
        zc = (keys[:, 2] + 0.5) * vs
        return keys[(zc >= z0) & (zc <= z1)]

    free_keys = in_slice(gt.keys(1))
    occ_keys = in_slice(gt.keys(2))
    _, _, st_free = recon.read(free_keys)
    _, _, st_occ = recon.read(occ_keys)
    tp = int(np.sum(st_free == VoxelState.FREE))
    fn = int(np.sum(st_free == VoxelState.OCCUPIED))
    unknown = int(np.sum(st_free == VoxelState.UNKNOWN))
    fp = int(np.sum(st_occ == VoxelState.FREE))
    return FreeSpaceReport(tp, fn, fp, unknown, float(z0), float(z1), len(free_keys), len(occ_keys))


def read_freespace_csv(path) -> dict:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) != 2 or rows[0] != ["tp", "fn", "fp", "unknown"]:
        raise ValueError(f"{path}: not a free-space CSV")
    return dict(zip(rows[0], (int(v) for v in rows[1])))


def read_points_csv(path) -> np.ndarray:
    """Points from a CSV with an ``x,y,z`` header (extra columns ignored)."""
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:3] != ["x", "y", "z"]:
        raise ValueError(f"{path}: expected header starting with x,y,z")
    try:
        return np.array([[float(v) for v in r[:3]] for r in rows[1:]], dtype=float).reshape(-1, 3)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed point row") from exc


def write_points_csv(points, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x", "y", "z"])
        for p in np.asarray(points, dtype=float).reshape(-1, 3):
            w.writerow([repr(float(v)) for v in p])
