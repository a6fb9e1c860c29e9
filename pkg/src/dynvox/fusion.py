"""Scan integration into a sparse grid.

One integration call builds a :class:`LocalField` from the scan, collects
free-space samples along the sensor rays and occupied-band voxels along the
surface normals, queries ``(d, sigma)`` at each voxel centre once and fuses
it with the running weighted mean::

    mu_k = (w_{k-1} * mu_{k-1} + (1 - sigma) * d) / (w_{k-1} + (1 - sigma))
    w_k  = min(w_{k-1} + (1 - sigma), weight_cap)
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .config import FusionConfig
from .local_field import LocalField, build_local_field
from .voxel_grid import SparseGrid, VoxelRecord, VoxelState, decode_keys, voxel_center

__all__ = [
    "FusionConfig",
    "sample_free_voxels",
    "band_voxels",
    "fuse_voxel",
    "fuse_arrays",
    "classify_voxel",
    "classify_arrays",
    "fuse_at",
    "integrate_scan",
]

_UNKNOWN = int(VoxelState.UNKNOWN)
_FREE = int(VoxelState.FREE)
_OCCUPIED = int(VoxelState.OCCUPIED)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return np.ascontiguousarray(pts)


def _key_box(lo_xyz, hi_xyz, voxel_size):
    lo = np.floor(lo_xyz / voxel_size).astype(np.int64) - 1
    hi = np.floor(hi_xyz / voxel_size).astype(np.int64) + 1
    shape = hi - lo + 1
    return lo, shape, int(np.prod(shape.astype(np.float64))) <= _kernels.DENSE_LIMIT


def free_codes(sensor_origin, surface_points, cfg: FusionConfig) -> np.ndarray:
    """Sorted unique codes of free-space samples (see ``sample_free_voxels``)."""
    pts = _as_points(surface_points)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64)
    sensor = np.ascontiguousarray(np.asarray(sensor_origin, dtype=float).reshape(3))
    lo, shape, dense = _key_box(np.minimum(pts.min(axis=0), sensor), np.maximum(pts.max(axis=0), sensor), cfg.voxel_size)
    if dense:
        return _kernels.free_space_codes_dense(sensor, pts, cfg.voxel_size, cfg.truncation, lo, shape)
    return np.sort(_kernels.free_space_codes(sensor, pts, cfg.voxel_size, cfg.truncation))


def sample_free_voxels(sensor_origin, surface_points, cfg: FusionConfig) -> np.ndarray:
    """Keys of free-space samples between the sensor and the surface points.

    One sample per ``voxel_size`` along each ray, stopping ``truncation``
    before the point.  Keys inside any ray's truncation band are dropped.
    Returns a sorted, duplicate-free ``(M, 3)`` key array.
    """
    return decode_keys(free_codes(sensor_origin, surface_points, cfg))


def band_codes(points, normals, cfg: FusionConfig) -> np.ndarray:
    pts = _as_points(points)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64)
    nrm = np.ascontiguousarray(np.asarray(normals, dtype=float).reshape(-1, 3))
    reach = cfg.truncation * np.abs(nrm)
    lo, shape, dense = _key_box((pts - reach).min(axis=0), (pts + reach).max(axis=0), cfg.voxel_size)
    if dense:
        return _kernels.normal_band_codes_dense(pts, nrm, cfg.voxel_size, cfg.truncation, lo, shape)
    return np.sort(_kernels.normal_band_codes(pts, nrm, cfg.voxel_size, cfg.truncation))


def band_voxels(points, normals, cfg: FusionConfig) -> np.ndarray:
    """Keys within ``±truncation`` of each point along its normal."""
    return decode_keys(band_codes(points, normals, cfg))


def fuse_arrays(mu, weight, d, sigma, weight_cap: float = np.inf):
    """Vectorised weighted-sum update; ``mu`` of zero-weight voxels is ignored."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any((sigma < 0) | (sigma >= 1)) or np.any(np.isnan(sigma)):
        raise ValueError("sigma must lie in [0, 1)")
    weight = np.asarray(weight, dtype=float)
    mu = np.where(weight > 0, mu, 0.0)
    inc = 1.0 - sigma
    total = weight + inc
    new_mu = (weight * mu + inc * d) / total
    return new_mu, np.minimum(total, weight_cap)


def fuse_voxel(record: VoxelRecord, d: float, sigma: float, weight_cap: float = np.inf) -> VoxelRecord:
    if not 0.0 <= sigma < 1.0:
        raise ValueError(f"sigma must lie in [0, 1), got {sigma}")
    w = record.weight
    mu = record.mu if w > 0 else 0.0
    inc = 1.0 - sigma
    record.mu = (w * mu + inc * d) / (w + inc)
    record.weight = min(w + inc, weight_cap)
    return record


def classify_arrays(mu, weight, prev_state, cfg: FusionConfig) -> np.ndarray:
    """State per voxel from its fused distance.

    Between the surface band and the free threshold a voxel keeps its prior
    known state; a voxel seen for the first time there is Free when in front
    of the surface and occupied when behind it.
    """
    mu = np.asarray(mu, dtype=float)
    prev = np.asarray(prev_state, dtype=np.int8)
    first = np.where(mu < 0, _OCCUPIED, _FREE).astype(np.int8)
    state = np.where(prev == _UNKNOWN, first, prev).astype(np.int8)
    state[np.abs(mu) <= cfg.surface_band] = _OCCUPIED
    state[mu > cfg.free_threshold] = _FREE
    state[np.asarray(weight) <= 0] = _UNKNOWN
    return state


def classify_voxel(record: VoxelRecord, cfg: FusionConfig) -> VoxelState:
    s = classify_arrays(np.array([record.mu]), np.array([record.weight]), np.array([int(record.state)]), cfg)
    return VoxelState(int(s[0]))


def fuse_at(grid: SparseGrid, codes: np.ndarray, d: np.ndarray, sigma: np.ndarray, cfg: FusionConfig) -> np.ndarray:
    """Fuse one measurement per voxel (codes must be unique); returns storage indices."""
    if len(codes) == 0:
        return np.zeros(0, dtype=np.int64)
    idx = grid.indices(decode_keys(codes), create=True, mark_dirty=True)
    mu, w = fuse_arrays(grid._mu[idx], grid._weight[idx], d, sigma, cfg.weight_cap)
    grid._mu[idx] = mu
    grid._weight[idx] = w
    grid._state[idx] = classify_arrays(mu, w, grid._state[idx], cfg)
    return idx


def _check_grid(grid: SparseGrid, cfg: FusionConfig):
    if grid.voxel_size != cfg.voxel_size:
        raise ValueError(f"grid voxel size {grid.voxel_size} != config voxel size {cfg.voxel_size}")


def integrate_field(grid: SparseGrid, field: LocalField, cfg: FusionConfig, free_space: bool = True) -> np.ndarray:
    """Fuse a prepared field into ``grid``; returns the codes that were touched.

    Free-space samples that are not also in the surface band lie on observed
    rays in front of the surface, so their distance is taken as positive.
    """
    _check_grid(grid, cfg)
    band = band_codes(field.points, field.normals, cfg)
    if not free_space:
        d, sigma = field.query(voxel_center(decode_keys(band), cfg.voxel_size))
        fuse_at(grid, band, d, sigma, cfg)
        return band
    free = free_codes(field.sensor_origin, field.points, cfg)
    codes = np.union1d(band, free)
    d, sigma = field.query(voxel_center(decode_keys(codes), cfg.voxel_size))
    only_free = ~np.isin(codes, band, assume_unique=True)
    d[only_free] = np.abs(d[only_free])
    fuse_at(grid, codes, d, sigma, cfg)
    return codes


def integrate_scan(grid: SparseGrid, points_in_grid_frame, sensor_origin_in_grid_frame, cfg: FusionConfig, free_space: bool = True) -> list[tuple]:
    """Integrate one scan expressed in the grid's frame; returns dirty leaf origins."""
    _check_grid(grid, cfg)
    pts = np.asarray(points_in_grid_frame, dtype=float).reshape(-1, 3)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    if len(pts) == 0:
        return []
    field = build_local_field(pts, sensor_origin_in_grid_frame, cfg)
    integrate_field(grid, field, cfg, free_space=free_space)
    return grid.drain_dirty_leaves()
