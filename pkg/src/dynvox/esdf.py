"""Distance lookups across the static map and all object submaps.

A query is only sent to maps whose world-frame bounding box, dilated by the
truncation distance, contains it.  Each such map contributes the ``(mu, w)``
of the voxel containing the query (if that voxel is known); contributions
are combined by the same weighted mean used for fusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import se3_apply, world_to_local
from .submaps import MapRegistry
from .voxel_grid import Aabb, voxel_key_for


@dataclass(frozen=True)
class EsdfResult:
    distance: float
    weight: float
    maps: tuple = field(default_factory=tuple)
    known: bool = True


class _Unknown:
    """No map holds a known voxel at the query; never a distance of 0."""

    known = False
    maps = ()

    def __repr__(self):
        return "UNKNOWN"

    def __bool__(self):
        return False


UNKNOWN = _Unknown()


def map_world_aabb(registry: MapRegistry, map_id: int) -> Aabb:
    """World-frame box of a map; submap boxes are the hull of their moved corners."""
    box = registry.grid(map_id).aabb()
    if box.is_empty or map_id == 0:
        return box
    corners = se3_apply(registry.pose(map_id), box.corners())
    return Aabb(corners.min(axis=0), corners.max(axis=0))


def candidate_maps(registry: MapRegistry, q_world, truncation: float) -> list[int]:
    q = np.asarray(q_world, dtype=float).reshape(3)
    return [j for j in registry.map_ids() if bool(map_world_aabb(registry, j).contains(q, margin=truncation))]


def _lookup(registry: MapRegistry, map_ids, q: np.ndarray):
    vs = registry.voxel_size
    parts = []
    for j in map_ids:
        local = world_to_local(registry.pose(j), q)
        mu, w, _ = registry.grid(j).read(voxel_key_for(local, vs)[None, :])
        if w[0] > 0:
            parts.append((j, float(mu[0]), float(w[0])))
    return parts


def _combine(parts):
    if not parts:
        return UNKNOWN
    if len(parts) == 1:
        j, mu, w = parts[0]
        return EsdfResult(mu, w, (j,))
    num = 0.0
    den = 0.0
    for _, mu, w in parts:
        num += w * mu
        den += w
    return EsdfResult(num / den, den, tuple(j for j, _, _ in parts))


def query_esdf(registry: MapRegistry, q_world, truncation: float):
    """Weighted distance at ``q_world`` over the candidate maps, or ``UNKNOWN``."""
    q = np.asarray(q_world, dtype=float).reshape(3)
    return _combine(_lookup(registry, candidate_maps(registry, q, truncation), q))


def query_esdf_all_maps(registry: MapRegistry, q_world):
    """Same as ``query_esdf`` but without culling (reference for tests)."""
    q = np.asarray(q_world, dtype=float).reshape(3)
    return _combine(_lookup(registry, registry.map_ids(), q))


def query_esdf_batch(registry: MapRegistry, queries, truncation: float, cull: bool = True):
    """Vectorised lookup: returns ``(distance, weight, known)`` arrays.

    Unknown queries get ``nan`` distance and zero weight.  Results match
    ``query_esdf`` bit for bit.
    """
    q = np.asarray(queries, dtype=float).reshape(-1, 3)
    n = len(q)
    num = np.zeros(n)
    den = np.zeros(n)
    count = np.zeros(n, dtype=np.int64)
    single = np.zeros(n)
    vs = registry.voxel_size
    for j in registry.map_ids():
        if cull:
            sel = np.flatnonzero(map_world_aabb(registry, j).contains(q, margin=truncation))
        else:
            sel = np.arange(n)
        if len(sel) == 0:
            continue
        local = world_to_local(registry.pose(j), q[sel])
        mu, w, _ = registry.grid(j).read(voxel_key_for(local, vs))
        hit = w > 0
        idx = sel[hit]
        num[idx] += w[hit] * mu[hit]
        den[idx] += w[hit]
        single[idx] = mu[hit]
        count[idx] += 1
    known = count > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.where(count == 1, single, num / den)
    dist[~known] = np.nan
    return dist, den, known
