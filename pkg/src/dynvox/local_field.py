"""Per-scan local distance field.

Answers ``(d, sigma)`` at arbitrary query points from one scan's surface
points: ``d`` is the distance to the nearest surface point, negative when the
query lies behind that point's surface normal; ``sigma`` is a range-based
uncertainty in ``[0, 1)``.  This stands in for a GP distance field with the
same query contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from . import _kernels
from ._kdtree import KDTree
from .config import FusionConfig


class FieldError(ValueError):
    pass


class EmptyScanError(FieldError):
    """No points were supplied."""


class OutOfRangeError(FieldError):
    """Points were supplied but none lies within the sensor range."""


def estimate_normals(points, sensor_origin, k_neighbors: int = 8, radius: float = 0.4) -> np.ndarray:
    """Unit normals by PCA over the ``k_neighbors`` nearest points.

    Only neighbours within ``radius`` count.  Points with fewer than three
    such neighbours fall back to the direction from the point to the sensor.
    Normals are flipped to face the sensor.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyScanError("cannot estimate normals of an empty cloud")
    if k_neighbors < 3:
        raise ValueError("k_neighbors must be >= 3")
    sensor = np.asarray(sensor_origin, dtype=float).reshape(3)
    return _normals_from_tree(KDTree(pts), pts, sensor, k_neighbors, radius)


def _normals_from_tree(tree, pts, sensor, k_neighbors, radius):
    idx = tree.self_knn(k_neighbors + 1, radius)  # +1: each point finds itself
    return _kernels.pca_normals(pts, idx, sensor)


@dataclass
class LocalField:
    points: np.ndarray
    normals: np.ndarray
    sensor_origin: np.ndarray
    max_range: float
    sigma_max: float
    sigma_range_coeff: float
    tree: KDTree
    dropped: int = 0

    def __len__(self):
        return len(self.points)

    def nearest(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Euclidean distance to, and index of, the nearest surface point."""
        return self.tree.query(np.asarray(q, dtype=float))

    def sigma(self, q) -> np.ndarray:
        r = np.linalg.norm(np.asarray(q, dtype=float) - self.sensor_origin, axis=-1)
        return np.minimum(self.sigma_max, self.sigma_range_coeff * r / self.max_range)

    def query(self, q) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(q, dtype=float)
        dist, idx = self.nearest(q)
        offset = q - self.points[idx]
        behind = np.einsum("...i,...i->...", offset, self.normals[idx]) < 0
        d = np.where(behind, -dist, dist)
        return d, self.sigma(q)


def build_local_field(points, sensor_origin, config: FusionConfig | None = None) -> LocalField:
    cfg = config or FusionConfig()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyScanError("scan contains no points")
    sensor = np.asarray(sensor_origin, dtype=float).reshape(3)
    finite = np.all(np.isfinite(pts), axis=1)
    in_range = finite & (np.linalg.norm(pts - sensor, axis=1) <= cfg.max_range)
    kept = pts[in_range]
    if len(kept) == 0:
        raise OutOfRangeError(f"all {len(pts)} points lie beyond max_range {cfg.max_range}")
    tree = KDTree(kept)
    normals = _normals_from_tree(tree, kept, sensor, cfg.normal_neighbors, cfg.normal_radius)
    return LocalField(
        points=kept,
        normals=normals,
        sensor_origin=sensor,
        max_range=cfg.max_range,
        sigma_max=cfg.sigma_max,
        sigma_range_coeff=cfg.sigma_range_coeff,
        tree=tree,
        dropped=int(len(pts) - len(kept)),
    )


def query_field(field: LocalField, q) -> tuple[np.ndarray, np.ndarray]:
    return field.query(q)
