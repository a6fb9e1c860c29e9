import math

import numpy as np
from skimage.measure import marching_cubes

from dynvox.config import FusionConfig
from dynvox.fusion import integrate_scan
from dynvox.geometry import Pose
from dynvox.meshing import MeshCache, TriangleMesh, _march, _cells_touching, extract_mesh, read_ply, write_ply
from dynvox.voxel_grid import SparseGrid, leaf_origin
from gridutil import sdf_grid


def sphere_sdf(r, c=(0.0, 0.0, 0.0)):
    return lambda p: np.linalg.norm(p - np.asarray(c), axis=-1) - r


def test_empty_grid():
    assert extract_mesh(SparseGrid(0.1)).is_empty


def test_sphere_close_and_watertight():
    vs = 0.05
    g = sdf_grid(sphere_sdf(0.5, (0.013, -0.007, 0.021)), vs, (-14, -14, -14), (14, 14, 14), band=3 * vs)
    m = extract_mesh(g)
    r = np.linalg.norm(m.vertices - [0.013, -0.007, 0.021], axis=1)
    assert np.max(np.abs(r - 0.5)) <= 0.5 * vs
    assert len(m.boundary_edges()) == 0
    # Euler characteristic of a sphere.
    edges = np.unique(np.sort(np.concatenate([m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [2, 0]]]), axis=1), axis=0)
    assert len(m.vertices) - len(edges) + len(m.triangles) == 2


def test_normals_point_to_positive_side():
    g = sdf_grid(sphere_sdf(0.5), 0.05, (-14, -14, -14), (14, 14, 14))
    m = extract_mesh(g)
    s = m.soup()
    n = np.cross(s[:, 1] - s[:, 0], s[:, 2] - s[:, 0])
    assert np.all(np.sum(n * s.mean(axis=1), axis=1) > 0)


def test_matches_skimage_lorensen():
    vs = 0.05
    lo, hi = (-14, -14, -14), (14, 14, 14)
    sdf = sphere_sdf(0.45, (0.011, 0.002, -0.017))
    g = sdf_grid(sdf, vs, lo, hi)
    ours = extract_mesh(g)
    n = hi[0] - lo[0] + 1
    idx = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), axis=-1)
    vol = sdf((idx + np.array(lo) + 0.5) * vs)
    verts, faces, _, _ = marching_cubes(vol, 0.0, method="lorensen")
    ref = TriangleMesh((verts + np.array(lo) + 0.5) * vs, faces)
    # scikit-image interpolates in float32, hence the tolerances.
    assert len(ours) == len(ref)
    assert math.isclose(ours.areas().sum(), ref.areas().sum(), rel_tol=1e-6)
    a = ours.vertices[np.lexsort(np.round(ours.vertices, 6).T)]
    b = ref.vertices[np.lexsort(np.round(ref.vertices, 6).T)]
    assert a.shape == b.shape and np.allclose(a, b, atol=1e-6)


def test_half_space_is_planar():
    vs = 0.1
    g = sdf_grid(lambda p: p[:, 2], vs, (-5, -5, -3), (5, 5, 3))
    m = extract_mesh(g)
    assert not m.is_empty
    assert np.max(np.abs(m.vertices[:, 2])) < 1e-6


def test_vertices_on_sign_changing_edges():
    vs = 0.1
    g = sdf_grid(sphere_sdf(0.33, (0.02, 0.01, 0.0)), vs, (-6, -6, -6), (6, 6, 6))
    m = extract_mesh(g)
    k = (m.vertices / vs) - 0.5  # voxel-centre lattice coordinates
    frac = np.abs(k - np.round(k))
    on_lattice = frac < 1e-9
    assert np.all(on_lattice.sum(axis=1) >= 2)
    sdf = sphere_sdf(0.33, (0.02, 0.01, 0.0))
    for v, k, lat in zip(m.vertices[:200], k[:200], on_lattice[:200]):
        if lat.all():
            continue
        a = int(np.flatnonzero(~lat)[0])
        lo_pt = v.copy()
        hi_pt = v.copy()
        lo_pt[a] = (np.floor(k[a]) + 0.5) * vs
        hi_pt[a] = lo_pt[a] + vs
        assert sdf(lo_pt[None])[0] * sdf(hi_pt[None])[0] <= 0


def test_mesh_transforms():
    g = sdf_grid(sphere_sdf(0.3), 0.1, (-5, -5, -5), (5, 5, 5))
    m = extract_mesh(g)
    assert np.array_equal(m.transformed(Pose.identity()).vertices, m.vertices)
    assert np.allclose(m.transformed(Pose.from_translation([5, 0, 0])).vertices, m.vertices + [5, 0, 0])
    r = Pose.rot_z(math.pi / 2)
    rv = m.transformed(r).vertices
    assert np.allclose(rv, m.vertices @ r.rotation.T, atol=1e-9)


def test_incremental_equals_full(rng):
    cfg = FusionConfig(voxel_size=0.1)
    g = SparseGrid(0.1)
    cache = MeshCache(g)
    for n in range(5):
        sensor = np.array([0.0, 0.3 * n, 0.2])
        u = rng.normal(size=(2500, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        pts = np.array([2.0, 0.5, 0.0]) + 0.8 * u
        seen = np.sum((pts - [2.0, 0.5, 0.0]) * (sensor - pts), axis=1) > 0
        cache.update(integrate_scan(g, pts[seen], sensor, cfg))
    soup, cells = _march(g, _cells_touching(g, None))
    owner = leaf_origin(cells)
    full = {}
    for tri, o in zip(soup, map(tuple, owner.tolist())):
        full.setdefault(o, []).append(tri)
    inc = cache.soup_by_leaf()
    assert set(inc) == set(full)
    for o, tris in full.items():
        a = np.sort(np.array(tris).reshape(len(tris), -1), axis=0)
        b = np.sort(inc[o].reshape(len(inc[o]), -1), axis=0)
        assert np.array_equal(a, b)
    assert np.array_equal(cache.mesh().vertices, extract_mesh(g).vertices)


def test_ply_round_trip(tmp_path):
    g = sdf_grid(sphere_sdf(0.3), 0.1, (-5, -5, -5), (5, 5, 5))
    m = extract_mesh(g)
    write_ply(m, tmp_path / "m.ply")
    back = read_ply(tmp_path / "m.ply")
    assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.triangles, m.triangles)
    write_ply(TriangleMesh(), tmp_path / "e.ply")
    assert read_ply(tmp_path / "e.ply").is_empty
