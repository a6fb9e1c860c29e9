"""Report figures written next to the CSV outputs (matplotlib, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simulator import OccupancyGrid  # noqa: E402
from .voxel_grid import SparseGrid, VoxelState, voxel_key_for  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # Fixed metadata keeps reruns byte-comparable.
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_coverage(reports: dict, path) -> Path:
    """Per-frame coverage of each object."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for j, rep in sorted(reports.items()):
        ax.plot(rep.frames, rep.r_cov, label=f"object {j}")
    ax.set_xlabel("frame")
    ax.set_ylabel("coverage")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if reports:
        ax.legend(loc="lower right")
    return _save(fig, path)


def plot_timing(frames, static_ms, object_ms, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(frames, static_ms, label="static")
    ax.plot(frames, object_ms, label="objects")
    ax.set_xlabel("frame")
    ax.set_ylabel("integration time [ms]")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_freespace_slice(recon: SparseGrid, gt: OccupancyGrid, z: float, path) -> Path:
    """Ground truth and reconstructed voxel states in the layer holding height ``z``."""
    vs = gt.voxel_size
    kz = int(voxel_key_for(z, vs)) - int(gt.lo[2])
    if not 0 <= kz < gt.states.shape[2]:
        raise ValueError(f"height {z} outside the ground-truth grid")
    gt_layer = gt.states[:, :, kz]
    ii, jj = np.meshgrid(np.arange(gt_layer.shape[0]), np.arange(gt_layer.shape[1]), indexing="ij")
    keys = np.stack([ii.ravel(), jj.ravel(), np.full(ii.size, kz)], axis=1) + gt.lo
    _, _, st = recon.read(keys)
    rec_layer = st.reshape(gt_layer.shape)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    extent = [gt.lo[0] * vs, (gt.lo[0] + gt_layer.shape[0]) * vs, gt.lo[1] * vs, (gt.lo[1] + gt_layer.shape[1]) * vs]
    cmap = matplotlib.colors.ListedColormap(["#d0d0d0", "#ffffff", "#303030"])
    for ax, layer, title in ((axes[0], gt_layer, "ground truth"), (axes[1], rec_layer, "reconstruction")):
        ax.imshow(layer.T, origin="lower", extent=extent, cmap=cmap, vmin=0, vmax=2, interpolation="nearest")
        ax.set_title(title)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
    fn = (gt_layer == 1) & (rec_layer == VoxelState.OCCUPIED)
    fp = (gt_layer == 2) & (rec_layer == VoxelState.FREE)
    for mask, color, label in ((fn, "tab:red", "FN"), (fp, "tab:blue", "FP")):
        x, y = np.nonzero(mask)
        axes[1].scatter((x + gt.lo[0] + 0.5) * vs, (y + gt.lo[1] + 0.5) * vs, s=12, c=color, label=label)
    axes[1].legend(loc="upper right", fontsize=8)
    return _save(fig, path)


def plot_bench(static_ms, object_ms, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    data = [np.asarray(static_ms, dtype=float), np.asarray(object_ms, dtype=float)]
    ax.boxplot(data)
    ax.set_xticks([1, 2], ["static", "objects"])
    ax.set_ylabel("integration time per frame [ms]")
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)
