"""Helpers that write analytic fields straight into a grid."""

import numpy as np

from dynvox.voxel_grid import SparseGrid, VoxelState, voxel_center


def box_keys(lo, hi):
    axes = [np.arange(lo[a], hi[a] + 1) for a in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def fill(grid: SparseGrid, keys, mu, weight=1.0):
    idx = grid.indices(keys, create=True, mark_dirty=True)
    grid._mu[idx] = mu
    grid._weight[idx] = weight
    grid._state[idx] = np.where(np.abs(mu) <= np.sqrt(3) / 2 * grid.voxel_size, VoxelState.OCCUPIED, VoxelState.FREE)
    return idx


def sdf_grid(sdf, voxel_size, lo, hi, band=None):
    """Grid holding ``sdf`` at voxel centres of keys in ``[lo, hi]`` (optionally only within ``band``)."""
    g = SparseGrid(voxel_size)
    keys = box_keys(lo, hi)
    mu = sdf(voxel_center(keys, voxel_size))
    if band is not None:
        keep = np.abs(mu) <= band
        keys, mu = keys[keep], mu[keep]
    fill(g, keys, mu)
    return g
