"""Marching-cubes extraction of the zero level set and PLY I/O.

Cell corners are voxel centres; a cell is named by its minimum-corner voxel
key.  Cells with any zero-weight corner are skipped.  Vertices are shared by
edge, so a closed level set yields a closed mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE
from .geometry import Pose, se3_apply
from .voxel_grid import LEAF_DIM, LEAF_VOXELS, SparseGrid, decode_keys, encode_keys, leaf_origin

_CORNERS = np.array(CORNER_OFFSETS, dtype=np.int64)
_TRI = np.full((256, 16), -1, dtype=np.int64)
for _case, _row in enumerate(TRI_TABLE):
    _TRI[_case, : len(_row)] = _row
_NTRI = np.array([len(r) // 3 for r in TRI_TABLE], dtype=np.int64)

# Edge e runs from corner offset _EDGE_LO[e] along axis _EDGE_AXIS[e].
_EDGE_LO = np.empty((12, 3), dtype=np.int64)
_EDGE_AXIS = np.empty(12, dtype=np.int64)
for _e, (_a, _b) in enumerate(EDGE_CORNERS):
    _oa, _ob = _CORNERS[_a], _CORNERS[_b]
    _EDGE_AXIS[_e] = int(np.flatnonzero(_oa != _ob)[0])
    _EDGE_LO[_e] = np.minimum(_oa, _ob)


@dataclass
class TriangleMesh:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    def __len__(self):
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def transformed(self, pose: Pose) -> "TriangleMesh":
        return TriangleMesh(se3_apply(pose, self.vertices), self.triangles.copy())

    def soup(self) -> np.ndarray:
        """Triangle corner positions, shape ``(M, 3, 3)``."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        s = self.soup()
        return 0.5 * np.linalg.norm(np.cross(s[:, 1] - s[:, 0], s[:, 2] - s[:, 0]), axis=1)

    def boundary_edges(self) -> np.ndarray:
        """Undirected edges used by exactly one triangle."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    @classmethod
    def concatenate(cls, meshes) -> "TriangleMesh":
        verts, tris, base = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + base)
            base += len(m.vertices)
        if not verts:
            return cls()
        return cls(np.concatenate(verts), np.concatenate(tris))


def mesh_from_soup(soup: np.ndarray) -> TriangleMesh:
    """Weld a ``(M, 3, 3)`` triangle soup by exact vertex position."""
    soup = np.asarray(soup, dtype=float).reshape(-1, 3, 3)
    if len(soup) == 0:
        return TriangleMesh()
    verts, inverse = np.unique(soup.reshape(-1, 3), axis=0, return_inverse=True)
    tris = inverse.reshape(-1, 3)
    keep = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    tris = tris[keep]
    s = verts[tris]
    area2 = np.linalg.norm(np.cross(s[:, 1] - s[:, 0], s[:, 2] - s[:, 0]), axis=1)
    tris = tris[area2 > 0]
    used, remap = np.unique(tris, return_inverse=True)
    return TriangleMesh(verts[used], remap.reshape(-1, 3))


def _cells_touching(grid: SparseGrid, leaves) -> np.ndarray:
    """Codes of candidate cells (min corner known) touching the given leaves."""
    w = grid.weight_store
    known_idx = np.flatnonzero(w > 0)
    if len(known_idx) == 0:
        return np.zeros(0, dtype=np.int64)
    keys = grid.keys_of(known_idx)
    if leaves is None:
        return np.sort(encode_keys(keys))
    target = np.asarray(list(leaves), dtype=np.int64).reshape(-1, 3)
    if len(target) == 0:
        return np.zeros(0, dtype=np.int64)
    target_codes = np.sort(encode_keys(target))
    # A cell touches a leaf when any of its corners falls inside it.
    touches = np.zeros(len(keys), dtype=bool)
    for off in _CORNERS:
        touches |= np.isin(encode_keys(leaf_origin(keys + off)), target_codes)
    return np.sort(encode_keys(keys[touches]))


def _cells_owned_by(grid: SparseGrid, origins) -> np.ndarray:
    """Codes of candidate cells whose min corner lies in one of ``origins``."""
    w = grid.weight_store
    known_idx = np.flatnonzero(w > 0)
    keys = grid.keys_of(known_idx)
    target = np.asarray(list(origins), dtype=np.int64).reshape(-1, 3)
    if len(keys) == 0 or len(target) == 0:
        return np.zeros(0, dtype=np.int64)
    inside = np.isin(encode_keys(leaf_origin(keys)), encode_keys(target))
    return np.sort(encode_keys(keys[inside]))


def _march(grid: SparseGrid, cell_codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Triangle soup ``(M, 3, 3)`` for the given cells, plus each triangle's cell key."""
    empty = (np.zeros((0, 3, 3)), np.zeros((0, 3), dtype=np.int64))
    if len(cell_codes) == 0:
        return empty
    cells = decode_keys(cell_codes)
    corner_keys = cells[:, None, :] + _CORNERS[None, :, :]
    mu, w, _ = grid.read(corner_keys.reshape(-1, 3))
    mu = mu.reshape(-1, 8)
    w = w.reshape(-1, 8)
    valid = np.all(w > 0, axis=1)
    case = ((mu < 0).astype(np.int64) << np.arange(8)).sum(axis=1)
    active = valid & (case != 0) & (case != 255)
    cells, mu, case = cells[active], mu[active], case[active]
    if len(cells) == 0:
        return empty

    ntri = _NTRI[case]
    cell_of_tri = np.repeat(np.arange(len(cells)), ntri)
    slot = np.arange(len(cell_of_tri)) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    edges = np.stack([_TRI[case[cell_of_tri], 3 * slot + c] for c in range(3)], axis=1)  # (T, 3)

    vs = grid.voxel_size
    c = cells[cell_of_tri][:, None, :]  # (T, 1, 3)
    lo_key = c + _EDGE_LO[edges]  # (T, 3, 3)
    axis = _EDGE_AXIS[edges]
    corner_a = np.array([a for a, _ in EDGE_CORNERS])[edges]
    corner_b = np.array([b for _, b in EDGE_CORNERS])[edges]
    tri_mu = mu[cell_of_tri]
    va = np.take_along_axis(tri_mu, corner_a, axis=1)
    vb = np.take_along_axis(tri_mu, corner_b, axis=1)
    # Orient each edge from its low to its high corner.
    a_is_lo = np.all(_CORNERS[corner_a] == _EDGE_LO[edges], axis=-1)
    v_lo = np.where(a_is_lo, va, vb)
    v_hi = np.where(a_is_lo, vb, va)
    t = v_lo / (v_lo - v_hi)
    p_lo = (lo_key + 0.5) * vs
    hi_key = lo_key.copy()
    np.put_along_axis(hi_key, axis[..., None], np.take_along_axis(lo_key, axis[..., None], axis=-1) + 1, axis=-1)
    p_hi = (hi_key + 0.5) * vs
    pos = p_lo.copy()
    step = np.take_along_axis(p_lo, axis[..., None], axis=-1)[..., 0] + t * vs
    np.put_along_axis(pos, axis[..., None], step[..., None], axis=-1)
    pos = np.where((t == 1.0)[..., None], p_hi, pos)
    # Table winding faces the negative side; flip so normals point to +mu.
    return pos[:, ::-1, :], cells[cell_of_tri]


def extract_mesh(grid: SparseGrid, leaves=None) -> TriangleMesh:
    """Zero level set over the whole grid, or over cells touching ``leaves``."""
    return mesh_from_soup(_march(grid, _cells_touching(grid, leaves))[0])


def submap_mesh_world(submap) -> TriangleMesh:
    return extract_mesh(submap.grid).transformed(submap.pose)


class MeshCache:
    """Per-leaf triangle cache refreshed from dirty leaves.

    Each cell belongs to the leaf holding its min corner.  A dirty leaf can
    change cells owned by itself and by its seven lower neighbours, so those
    owners are re-marched on update.
    """

    def __init__(self, grid: SparseGrid):
        self.grid = grid
        self._soups: dict[tuple, np.ndarray] = {}

    def update(self, dirty_leaves) -> None:
        owners = set()
        for o in dirty_leaves:
            o = np.asarray(o, dtype=np.int64)
            for off in _CORNERS:
                owners.add(tuple(int(v) for v in o - LEAF_DIM * off))
        if not owners:
            return
        origins = np.array(sorted(owners), dtype=np.int64)
        codes = _cells_owned_by(self.grid, origins)
        soup, tri_cells = _march(self.grid, codes)
        for o in owners:
            self._soups.pop(o, None)
        if len(soup) == 0:
            return
        tri_owner = leaf_origin(tri_cells)
        order = np.lexsort(tri_owner.T[::-1])
        soup, tri_owner = soup[order], tri_owner[order]
        bounds = np.flatnonzero(np.any(np.diff(tri_owner, axis=0) != 0, axis=1)) + 1
        for part_soup, part_owner in zip(np.split(soup, bounds), np.split(tri_owner, bounds)):
            self._soups[tuple(int(v) for v in part_owner[0])] = part_soup

    def soup_by_leaf(self) -> dict[tuple, np.ndarray]:
        return dict(self._soups)

    def mesh(self) -> TriangleMesh:
        if not self._soups:
            return TriangleMesh()
        return mesh_from_soup(np.concatenate([self._soups[k] for k in sorted(self._soups)]))


def write_ply(mesh: TriangleMesh, path) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> TriangleMesh:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    if "format ascii 1.0" not in (line.strip() for line in text[:3]):
        raise ValueError(f"{path}: only ASCII PLY is supported")
    nv = nf = 0
    end = None
    for n, line in enumerate(text):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
        elif line.strip() == "end_header":
            end = n + 1
            break
    if end is None:
        raise ValueError(f"{path}: missing end_header")
    verts = np.array([[float(v) for v in text[end + i].split()[:3]] for i in range(nv)]).reshape(-1, 3)
    tris = []
    for i in range(nf):
        parts = [int(v) for v in text[end + nv + i].split()]
        if parts[0] != 3:
            raise ValueError(f"{path}: only triangle faces are supported")
        tris.append(parts[1:4])
    return TriangleMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))
