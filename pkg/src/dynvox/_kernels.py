"""Compiled inner loops: ray marching, normal-band walks, voxel traversal.

Voxel keys are handled as packed int64 codes (see ``voxel_grid.encode_keys``)
and deduplicated with a small open-addressing hash set.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_EMPTY = np.int64(-1)  # codes are always >= 0
_BIAS = 1 << 20
_KEY_EPS = 1e-9  # same boundary snap as voxel_grid.voxel_key_for
_BITS = 21
_MUL = np.uint64(0x9E3779B97F4A7C15)


@nb.njit(cache=True, inline="always")
def _code(x, y, z, inv_vs):
    i = np.int64(math.floor(x * inv_vs + _KEY_EPS)) + _BIAS
    j = np.int64(math.floor(y * inv_vs + _KEY_EPS)) + _BIAS
    k = np.int64(math.floor(z * inv_vs + _KEY_EPS)) + _BIAS
    return (i << (2 * _BITS)) | (j << _BITS) | k


@nb.njit(cache=True, inline="always")
def _slot(code, mask):
    h = np.uint64(code) * _MUL
    return np.int64((h >> np.uint64(29)) & np.uint64(mask))


@nb.njit(cache=True)
def _set_new(capacity_hint):
    cap = 1 << 12
    while cap < 2 * capacity_hint:
        cap <<= 1
    return np.full(cap, _EMPTY, dtype=np.int64)


@nb.njit(cache=True)
def _set_insert(table, code):
    """Insert; returns 1 if the code was new, else 0. Table must not be full."""
    mask = len(table) - 1
    s = _slot(code, mask)
    while True:
        v = table[s]
        if v == code:
            return 0
        if v == _EMPTY:
            table[s] = code
            return 1
        s = (s + 1) & mask


@nb.njit(cache=True)
def _set_contains(table, code):
    mask = len(table) - 1
    s = _slot(code, mask)
    while True:
        v = table[s]
        if v == code:
            return True
        if v == _EMPTY:
            return False
        s = (s + 1) & mask


@nb.njit(cache=True)
def _set_grow(table):
    new = np.full(2 * len(table), _EMPTY, dtype=np.int64)
    for v in table:
        if v != _EMPTY:
            _set_insert(new, v)
    return new


@nb.njit(cache=True)
def _set_values(table, count):
    out = np.empty(count, dtype=np.int64)
    n = 0
    for v in table:
        if v != _EMPTY:
            out[n] = v
            n += 1
    return out


@nb.njit(cache=True)
def free_space_codes(sensor, points, voxel_size, truncation):
    """Codes of free-space samples along sensor->point rays.

    Samples sit at ``t = i * voxel_size`` for ``t < |p - s| - truncation``.
    Keys touched by any ray's front truncation band ``[L - trunc, L]``
    (walked at half-voxel steps, endpoint included) are excluded.
    """
    inv_vs = 1.0 / voxel_size
    half = 0.5 * voxel_size
    n = points.shape[0]
    band = _set_new(1024)
    nband = 0
    for r in range(n):
        dx = points[r, 0] - sensor[0]
        dy = points[r, 1] - sensor[1]
        dz = points[r, 2] - sensor[2]
        L = math.sqrt(dx * dx + dy * dy + dz * dz)
        if L == 0.0:
            continue
        dx /= L
        dy /= L
        dz /= L
        t0 = L - truncation
        if t0 < 0.0:
            t0 = 0.0
        m = int(math.floor((L - t0) / half)) + 1
        for s in range(m + 1):
            t = t0 + s * half if s < m else L
            if 2 * (nband + 1) > len(band):
                band = _set_grow(band)
            nband += _set_insert(band, _code(sensor[0] + t * dx, sensor[1] + t * dy, sensor[2] + t * dz, inv_vs))
    free = _set_new(1024)
    nfree = 0
    for r in range(n):
        dx = points[r, 0] - sensor[0]
        dy = points[r, 1] - sensor[1]
        dz = points[r, 2] - sensor[2]
        L = math.sqrt(dx * dx + dy * dy + dz * dz)
        if L <= truncation:
            continue
        dx /= L
        dy /= L
        dz /= L
        steps = int(math.ceil((L - truncation) * inv_vs - 1e-9))
        for i in range(steps):
            t = i * voxel_size
            c = _code(sensor[0] + t * dx, sensor[1] + t * dy, sensor[2] + t * dz, inv_vs)
            if _set_contains(band, c):
                continue
            if 2 * (nfree + 1) > len(free):
                free = _set_grow(free)
            nfree += _set_insert(free, c)
    return _set_values(free, nfree)


@nb.njit(cache=True)
def normal_band_codes(points, normals, voxel_size, truncation):
    """Codes of voxels met walking ``±truncation`` along each normal at half-voxel steps."""
    inv_vs = 1.0 / voxel_size
    half = 0.5 * voxel_size
    m = int(math.floor(truncation / half + 1e-9))
    table = _set_new(points.shape[0] * 4)
    count = 0
    for r in range(points.shape[0]):
        for s in range(-m, m + 1):
            t = s * half
            if 2 * (count + 1) > len(table):
                table = _set_grow(table)
            count += _set_insert(
                table,
                _code(
                    points[r, 0] + t * normals[r, 0],
                    points[r, 1] + t * normals[r, 1],
                    points[r, 2] + t * normals[r, 2],
                    inv_vs,
                ),
            )
    return _set_values(table, count)


@nb.njit(cache=True)
def traverse_rays(origins, ends, hit, voxel_size, lo, free_out):
    """Exact voxel traversal (Amanatides & Woo) of segments into a dense grid.

    Marks ``free_out = 1`` for every voxel a segment passes through before
    its end voxel.  The end voxel is marked too when ``hit[r]`` is false
    (the ray ran out of range instead of striking a surface).
    """
    inv = 1.0 / voxel_size
    nx, ny, nz = free_out.shape
    cur = np.empty(3, dtype=np.int64)
    last = np.empty(3, dtype=np.int64)
    step = np.empty(3, dtype=np.int64)
    tmax = np.empty(3)
    tdelta = np.empty(3)
    for r in range(origins.shape[0]):
        for a in range(3):
            o = origins[r, a]
            d = ends[r, a] - o
            cur[a] = np.int64(math.floor(o * inv + _KEY_EPS))
            last[a] = np.int64(math.floor(ends[r, a] * inv + _KEY_EPS))
            if d > 0:
                step[a] = 1
                tmax[a] = ((cur[a] + 1) * voxel_size - o) / d
                tdelta[a] = voxel_size / d
            elif d < 0:
                step[a] = -1
                tmax[a] = (cur[a] * voxel_size - o) / d
                tdelta[a] = -voxel_size / d
            else:
                step[a] = 0
                tmax[a] = np.inf
                tdelta[a] = np.inf
        limit = abs(last[0] - cur[0]) + abs(last[1] - cur[1]) + abs(last[2] - cur[2])
        for _ in range(limit + 1):
            if cur[0] == last[0] and cur[1] == last[1] and cur[2] == last[2]:
                break
            i = cur[0] - lo[0]
            j = cur[1] - lo[1]
            k = cur[2] - lo[2]
            if 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
                free_out[i, j, k] = 1
            a = 0
            if tmax[1] < tmax[a]:
                a = 1
            if tmax[2] < tmax[a]:
                a = 2
            if tmax[a] > 1.0:
                break
            cur[a] += step[a]
            tmax[a] += tdelta[a]
        if not hit[r]:
            i = last[0] - lo[0]
            j = last[1] - lo[1]
            k = last[2] - lo[2]
            if 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
                free_out[i, j, k] = 1


# Dense variants: when the scan's voxel bounding box is small enough, a flat
# mark array beats hashing, and scanning it in key order yields sorted codes.

DENSE_LIMIT = 1 << 25


@nb.njit(cache=True)
def _dense_collect(marks, lo, want):
    nx, ny, nz = marks.shape
    count = 0
    for v in marks.ravel():
        if v == want:
            count += 1
    out = np.empty(count, dtype=np.int64)
    n = 0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if marks[i, j, k] == want:
                    out[n] = (
                        ((lo[0] + i + _BIAS) << (2 * _BITS)) | ((lo[1] + j + _BIAS) << _BITS) | (lo[2] + k + _BIAS)
                    )
                    n += 1
    return out


@nb.njit(cache=True, inline="always")
def _mark(marks, lo, x, y, z, inv_vs, value, only_if_zero):
    i = np.int64(math.floor(x * inv_vs + _KEY_EPS)) - lo[0]
    j = np.int64(math.floor(y * inv_vs + _KEY_EPS)) - lo[1]
    k = np.int64(math.floor(z * inv_vs + _KEY_EPS)) - lo[2]
    if only_if_zero:
        if marks[i, j, k] == 0:
            marks[i, j, k] = value
    else:
        marks[i, j, k] = value


@nb.njit(cache=True)
def free_space_codes_dense(sensor, points, voxel_size, truncation, lo, shape):
    """Same result as ``free_space_codes``, sorted; ``lo``/``shape`` must bound every ray."""
    inv_vs = 1.0 / voxel_size
    half = 0.5 * voxel_size
    marks = np.zeros((shape[0], shape[1], shape[2]), dtype=np.uint8)
    n = points.shape[0]
    for r in range(n):
        dx = points[r, 0] - sensor[0]
        dy = points[r, 1] - sensor[1]
        dz = points[r, 2] - sensor[2]
        L = math.sqrt(dx * dx + dy * dy + dz * dz)
        if L == 0.0:
            continue
        dx /= L
        dy /= L
        dz /= L
        t0 = L - truncation
        if t0 < 0.0:
            t0 = 0.0
        m = int(math.floor((L - t0) / half)) + 1
        for s in range(m + 1):
            t = t0 + s * half if s < m else L
            _mark(marks, lo, sensor[0] + t * dx, sensor[1] + t * dy, sensor[2] + t * dz, inv_vs, 1, False)
    for r in range(n):
        dx = points[r, 0] - sensor[0]
        dy = points[r, 1] - sensor[1]
        dz = points[r, 2] - sensor[2]
        L = math.sqrt(dx * dx + dy * dy + dz * dz)
        if L <= truncation:
            continue
        dx /= L
        dy /= L
        dz /= L
        steps = int(math.ceil((L - truncation) * inv_vs - 1e-9))
        for i in range(steps):
            t = i * voxel_size
            _mark(marks, lo, sensor[0] + t * dx, sensor[1] + t * dy, sensor[2] + t * dz, inv_vs, 2, True)
    return _dense_collect(marks, lo, 2)


@nb.njit(cache=True)
def normal_band_codes_dense(points, normals, voxel_size, truncation, lo, shape):
    inv_vs = 1.0 / voxel_size
    half = 0.5 * voxel_size
    m = int(math.floor(truncation / half + 1e-9))
    marks = np.zeros((shape[0], shape[1], shape[2]), dtype=np.uint8)
    for r in range(points.shape[0]):
        for s in range(-m, m + 1):
            t = s * half
            _mark(
                marks,
                lo,
                points[r, 0] + t * normals[r, 0],
                points[r, 1] + t * normals[r, 1],
                points[r, 2] + t * normals[r, 2],
                inv_vs,
                1,
                False,
            )
    return _dense_collect(marks, lo, 1)


# A neighbourhood whose middle covariance eigenvalue is below this fraction of
# the largest is treated as a line (e.g. one scan column seen at a grazing
# angle); its plane is then not observable from the points alone.
LINEAR_RATIO = 0.01


@nb.njit(cache=True)
def _sym3_eigvals(a):
    """Eigenvalues (min, mid, max) of a symmetric 3x3 matrix, trigonometric closed form."""
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = (a[0, 0] + a[1, 1] + a[2, 2]) / 3.0
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
    if p2 <= 0.0:
        return q, q, q, 0.0
    p = math.sqrt(p2 / 6.0)
    b00 = (a[0, 0] - q) / p
    b11 = (a[1, 1] - q) / p
    b22 = (a[2, 2] - q) / p
    b01 = a[0, 1] / p
    b02 = a[0, 2] / p
    b12 = a[1, 2] / p
    det = b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) + b02 * (b01 * b12 - b11 * b02)
    r = min(max(det / 2.0, -1.0), 1.0)
    phi = math.acos(r) / 3.0
    lmax = q + 2.0 * p * math.cos(phi)
    lmin = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    return lmin, 3.0 * q - lmax - lmin, lmax, p


@nb.njit(cache=True)
def _eigvec(a, lam, p):
    """Eigenvector for a simple eigenvalue ``lam``: the largest cross product of two rows of ``a - lam I``."""
    m00 = a[0, 0] - lam
    m11 = a[1, 1] - lam
    m22 = a[2, 2] - lam
    m01 = a[0, 1]
    m02 = a[0, 2]
    m12 = a[1, 2]
    c0x = m01 * m12 - m02 * m11
    c0y = m02 * m01 - m00 * m12
    c0z = m00 * m11 - m01 * m01
    c1x = m01 * m22 - m02 * m12
    c1y = m02 * m02 - m00 * m22
    c1z = m00 * m12 - m01 * m02
    c2x = m11 * m22 - m12 * m12
    c2y = m12 * m02 - m01 * m22
    c2z = m01 * m12 - m11 * m02
    n0 = c0x * c0x + c0y * c0y + c0z * c0z
    n1 = c1x * c1x + c1y * c1y + c1z * c1z
    n2 = c2x * c2x + c2y * c2y + c2z * c2z
    if n0 >= n1 and n0 >= n2:
        best, x, y, z = n0, c0x, c0y, c0z
    elif n1 >= n2:
        best, x, y, z = n1, c1x, c1y, c1z
    else:
        best, x, y, z = n2, c2x, c2y, c2z
    if not best > 1e-30 * (p * p) ** 2:
        return False, 0.0, 0.0, 0.0
    return True, x, y, z


@nb.njit(cache=True)
def _smallest_eigvec(a):
    """Eigenvector of the smallest eigenvalue of a symmetric 3x3 matrix.

    Returns ``ok = False`` when the direction is undefined (isotropic or
    degenerate matrix).
    """
    lmin, _, _, p = _sym3_eigvals(a)
    if p <= 0.0:
        return False, 0.0, 0.0, 0.0
    return _eigvec(a, lmin, p)


@nb.njit(cache=True)
def _neighbourhood_normal(cov, tx, ty, tz):
    """Plane normal of a neighbourhood, or the view direction ``t`` made
    perpendicular to the principal axis when the points lie on a line."""
    lmin, lmid, lmax, p = _sym3_eigvals(cov)
    if p <= 0.0 or lmax <= 0.0:
        return False, 0.0, 0.0, 0.0
    if lmid <= LINEAR_RATIO * lmax:
        ok, ex, ey, ez = _eigvec(cov, lmax, p)
        if not ok:
            return False, 0.0, 0.0, 0.0
        e = math.sqrt(ex * ex + ey * ey + ez * ez)
        ex /= e
        ey /= e
        ez /= e
        dot = tx * ex + ty * ey + tz * ez
        nx_ = tx - dot * ex
        ny_ = ty - dot * ey
        nz_ = tz - dot * ez
        if nx_ * nx_ + ny_ * ny_ + nz_ * nz_ <= 1e-24 * (tx * tx + ty * ty + tz * tz):
            return False, 0.0, 0.0, 0.0
        return True, nx_, ny_, nz_
    return _eigvec(cov, lmin, p)


@nb.njit(cache=True)
def pca_normals(points, neighbors, sensor):
    """Smallest-eigenvalue direction of each neighbourhood covariance.

    ``neighbors[r]`` lists indices into ``points`` (``-1`` pads); the point
    itself is included.  Rows with fewer than four entries (the point plus
    three neighbours) get the direction towards the sensor; nearly collinear
    neighbourhoods get that direction made perpendicular to their line.  The
    result faces the sensor and has unit length.
    """
    n = points.shape[0]
    out = np.empty((n, 3))
    cov = np.empty((3, 3))
    for r in range(n):
        tx = sensor[0] - points[r, 0]
        ty = sensor[1] - points[r, 1]
        tz = sensor[2] - points[r, 2]
        cnt = 0
        mx = 0.0
        my = 0.0
        mz = 0.0
        for c in range(neighbors.shape[1]):
            q = neighbors[r, c]
            if q < 0:
                continue
            cnt += 1
            mx += points[q, 0]
            my += points[q, 1]
            mz += points[q, 2]
        nx_ = 0.0
        ny_ = 0.0
        nz_ = 0.0
        ok = False
        if cnt >= 4:
            mx /= cnt
            my /= cnt
            mz /= cnt
            cov[:, :] = 0.0
            for c in range(neighbors.shape[1]):
                q = neighbors[r, c]
                if q < 0:
                    continue
                a0 = points[q, 0] - mx
                a1 = points[q, 1] - my
                a2 = points[q, 2] - mz
                cov[0, 0] += a0 * a0
                cov[0, 1] += a0 * a1
                cov[0, 2] += a0 * a2
                cov[1, 1] += a1 * a1
                cov[1, 2] += a1 * a2
                cov[2, 2] += a2 * a2
            cov[1, 0] = cov[0, 1]
            cov[2, 0] = cov[0, 2]
            cov[2, 1] = cov[1, 2]
            ok, nx_, ny_, nz_ = _neighbourhood_normal(cov, tx, ty, tz)
        if not ok:
            nx_, ny_, nz_ = tx, ty, tz
            if nx_ == 0.0 and ny_ == 0.0 and nz_ == 0.0:
                nz_ = 1.0
        if nx_ * tx + ny_ * ty + nz_ * tz < 0:
            nx_, ny_, nz_ = -nx_, -ny_, -nz_
        norm = math.sqrt(nx_ * nx_ + ny_ * ny_ + nz_ * nz_)
        out[r, 0] = nx_ / norm
        out[r, 1] = ny_ / norm
        out[r, 2] = nz_ / norm
    return out
