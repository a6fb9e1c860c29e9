"""Sparse voxel grid: a hash of dense 8x8x8 leaf blocks.

Voxel ``(i, j, k)`` covers the half-open cell ``[i*s, (i+1)*s)`` per axis.
Leaves are keyed by their origin, the voxel key of the block corner (all
components multiples of 8).  Voxel data lives in flat numpy arrays indexed
by ``leaf_slot * 512 + offset`` so that batches of voxels can be read and
written without Python loops.
"""

from __future__ import annotations

import csv
import hashlib
import json
from enum import IntEnum
from pathlib import Path
from typing import NamedTuple

import numpy as np

LEAF_DIM = 8
LEAF_SHIFT = 3
LEAF_VOXELS = LEAF_DIM ** 3
KEY_EPS = 1e-9  # in voxels; see voxel_key_for

_CODE_BIAS = 1 << 20
_CODE_BITS = 21


class VoxelState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2  # within the surface band


STATE_NAMES = {VoxelState.UNKNOWN: "unknown", VoxelState.FREE: "free", VoxelState.OCCUPIED: "occupied"}
STATE_FROM_NAME = {v: k for k, v in STATE_NAMES.items()}


def voxel_key_for(p, voxel_size: float) -> np.ndarray:
    """Integer key(s) of the voxel containing ``p``; floor convention.

    Coordinates within ``KEY_EPS`` voxels below a boundary snap up to it, so
    that e.g. 0.3 at 0.1 m voxels is key 3 despite 0.3 / 0.1 < 3 in floats.
    """
    return np.floor(np.asarray(p, dtype=float) / voxel_size + KEY_EPS).astype(np.int64)


def voxel_center(key, voxel_size: float) -> np.ndarray:
    return (np.asarray(key, dtype=np.int64) + 0.5) * voxel_size


def encode_keys(keys: np.ndarray) -> np.ndarray:
    """Pack ``(N, 3)`` int keys into sortable int64 codes (±2^20 per axis)."""
    k = np.asarray(keys, dtype=np.int64) + _CODE_BIAS
    return (k[..., 0] << (2 * _CODE_BITS)) | (k[..., 1] << _CODE_BITS) | k[..., 2]


def decode_keys(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    mask = (1 << _CODE_BITS) - 1
    out = np.empty(codes.shape + (3,), dtype=np.int64)
    out[..., 0] = (codes >> (2 * _CODE_BITS)) & mask
    out[..., 1] = (codes >> _CODE_BITS) & mask
    out[..., 2] = codes & mask
    return out - _CODE_BIAS


def leaf_origin(keys) -> np.ndarray:
    return (np.asarray(keys, dtype=np.int64) >> LEAF_SHIFT) << LEAF_SHIFT


def _offsets(keys: np.ndarray) -> np.ndarray:
    low = keys & (LEAF_DIM - 1)
    return (low[:, 0] * LEAF_DIM + low[:, 1]) * LEAF_DIM + low[:, 2]


class Aabb(NamedTuple):
    """Axis-aligned box in meters; an empty box has ``min > max``."""

    min: np.ndarray
    max: np.ndarray

    @classmethod
    def empty(cls) -> "Aabb":
        return cls(np.full(3, np.inf), np.full(3, -np.inf))

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.min > self.max))

    def contains(self, p, margin: float = 0.0) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.all((p >= self.min - margin) & (p <= self.max + margin), axis=-1)

    def corners(self) -> np.ndarray:
        lo, hi = self.min, self.max
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


class VoxelRecord:
    """Live reference to one voxel's storage inside a :class:`SparseGrid`."""

    __slots__ = ("_grid", "_index")

    def __init__(self, grid: "SparseGrid", index: int):
        self._grid = grid
        self._index = index

    @property
    def mu(self) -> float:
        return float(self._grid._mu[self._index])

    @mu.setter
    def mu(self, value: float):
        self._grid._mu[self._index] = value

    @property
    def weight(self) -> float:
        return float(self._grid._weight[self._index])

    @weight.setter
    def weight(self, value: float):
        self._grid._weight[self._index] = value

    @property
    def state(self) -> VoxelState:
        return VoxelState(int(self._grid._state[self._index]))

    @state.setter
    def state(self, value: VoxelState):
        self._grid._state[self._index] = int(value)

    def __eq__(self, other):
        return isinstance(other, VoxelRecord) and other._grid is self._grid and other._index == self._index

    def __hash__(self):
        return hash((id(self._grid), self._index))

    def __repr__(self):
        return f"VoxelRecord(mu={self.mu}, weight={self.weight}, state={self.state.name})"


class LeafNode(NamedTuple):
    origin: tuple
    mu: np.ndarray  # 8x8x8 views into grid storage
    weight: np.ndarray
    state: np.ndarray
    dirty: bool


class SparseGrid:
    """Two-level sparse grid: hash of leaf origins -> dense leaf blocks.

    Single writer.  Readers may run concurrently only between writes.
    """

    def __init__(self, voxel_size: float):
        if not voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        self.voxel_size = float(voxel_size)
        self._slots: dict[int, int] = {}  # leaf origin code -> slot
        self._origins = np.zeros((0, 3), dtype=np.int64)
        self._mu = np.zeros(0)
        self._weight = np.zeros(0)
        self._state = np.zeros(0, dtype=np.int8)
        self._n_leaves = 0
        self._dirty: set[int] = set()
        self._lo = np.full(3, np.iinfo(np.int64).max, dtype=np.int64)
        self._hi = np.full(3, np.iinfo(np.int64).min, dtype=np.int64)

    # -- allocation ---------------------------------------------------------

    def __len__(self):
        return self._n_leaves

    @property
    def leaf_count(self) -> int:
        return self._n_leaves

    def _grow(self, need: int):
        cap = len(self._origins)
        if need <= cap:
            return
        new_cap = max(need, 2 * cap, 16)
        origins = np.zeros((new_cap, 3), dtype=np.int64)
        origins[:cap] = self._origins
        self._origins = origins
        for name, dtype in (("_mu", float), ("_weight", float), ("_state", np.int8)):
            arr = np.zeros(new_cap * LEAF_VOXELS, dtype=dtype)
            arr[: cap * LEAF_VOXELS] = getattr(self, name)
            setattr(self, name, arr)

    def _slots_for_origins(self, origins: np.ndarray, create: bool) -> np.ndarray:
        """Slot per unique leaf origin, allocating if ``create``; -1 if absent."""
        codes = encode_keys(origins)
        out = np.empty(len(codes), dtype=np.int64)
        slots = self._slots
        new = []
        for n, c in enumerate(codes.tolist()):
            s = slots.get(c)
            if s is None:
                if not create:
                    out[n] = -1
                    continue
                s = self._n_leaves + len(new)
                slots[c] = s
                new.append(n)
            out[n] = s
        if new:
            self._grow(self._n_leaves + len(new))
            new_origins = origins[new]
            self._origins[self._n_leaves : self._n_leaves + len(new)] = new_origins
            self._n_leaves += len(new)
            self._lo = np.minimum(self._lo, new_origins.min(axis=0))
            self._hi = np.maximum(self._hi, new_origins.max(axis=0))
        return out

    def indices(self, keys, create: bool = False, mark_dirty: bool = False) -> np.ndarray:
        """Flat storage index per voxel key; -1 where the leaf is absent."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        if len(keys) == 0:
            return np.zeros(0, dtype=np.int64)
        origins = leaf_origin(keys)
        codes = encode_keys(origins)
        ucodes, inverse = np.unique(codes, return_inverse=True)
        uorigins = decode_keys(ucodes)
        slots = self._slots_for_origins(uorigins, create)
        if mark_dirty:
            self._dirty.update(int(s) for s in slots if s >= 0)
        slot = slots[inverse.reshape(-1)]
        idx = slot * LEAF_VOXELS + _offsets(keys)
        idx[slot < 0] = -1
        return idx

    def get_or_insert(self, key) -> VoxelRecord:
        idx = self.indices(np.asarray(key).reshape(1, 3), create=True, mark_dirty=True)
        return VoxelRecord(self, int(idx[0]))

    def get(self, key) -> VoxelRecord | None:
        idx = self.indices(np.asarray(key).reshape(1, 3))
        return None if idx[0] < 0 else VoxelRecord(self, int(idx[0]))

    # -- batch access -------------------------------------------------------

    def read(self, keys) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(mu, weight, state) per key; absent voxels read as Unknown."""
        idx = self.indices(keys)
        ok = idx >= 0
        mu = np.zeros(len(idx))
        w = np.zeros(len(idx))
        st = np.zeros(len(idx), dtype=np.int8)
        mu[ok] = self._mu[idx[ok]]
        w[ok] = self._weight[idx[ok]]
        st[ok] = self._state[idx[ok]]
        return mu, w, st

    @property
    def mu_store(self) -> np.ndarray:
        return self._mu[: self._n_leaves * LEAF_VOXELS]

    @property
    def weight_store(self) -> np.ndarray:
        return self._weight[: self._n_leaves * LEAF_VOXELS]

    @property
    def state_store(self) -> np.ndarray:
        return self._state[: self._n_leaves * LEAF_VOXELS]

    def keys_of(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        slot, off = np.divmod(indices, LEAF_VOXELS)
        local = np.stack([off // 64, (off // 8) % 8, off % 8], axis=-1)
        return self._origins[slot] + local

    # -- leaves -------------------------------------------------------------

    def leaf_origins(self) -> np.ndarray:
        return self._origins[: self._n_leaves].copy()

    def leaf(self, origin) -> LeafNode | None:
        slot = self._slots.get(int(encode_keys(np.asarray(origin, dtype=np.int64))))
        if slot is None:
            return None
        sl = slice(slot * LEAF_VOXELS, (slot + 1) * LEAF_VOXELS)
        shape = (LEAF_DIM,) * 3
        return LeafNode(
            tuple(int(v) for v in self._origins[slot]),
            self._mu[sl].reshape(shape),
            self._weight[sl].reshape(shape),
            self._state[sl].reshape(shape),
            slot in self._dirty,
        )

    def drain_dirty_leaves(self) -> list[tuple]:
        """Origins of leaves written since the last drain; clears the flags."""
        slots = sorted(self._dirty)
        self._dirty.clear()
        return [tuple(int(v) for v in self._origins[s]) for s in slots]

    def aabb(self) -> Aabb:
        if self._n_leaves == 0:
            return Aabb.empty()
        return Aabb(self._lo * self.voxel_size, (self._hi + LEAF_DIM) * self.voxel_size)

    # -- snapshots ----------------------------------------------------------

    def allocated(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """All allocated voxels sorted by key: (keys, mu, weight, state)."""
        n = self._n_leaves * LEAF_VOXELS
        idx = np.arange(n, dtype=np.int64)
        keys = self.keys_of(idx)
        order = np.argsort(encode_keys(keys), kind="stable")
        idx = idx[order]
        return keys[order], self._mu[idx], self._weight[idx], self._state[idx]

    def known(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        keys, mu, w, st = self.allocated()
        m = w > 0
        return keys[m], mu[m], w[m], st[m]

    def digest(self) -> str:
        """Content hash of the voxel state (for change detection in tests)."""
        h = hashlib.sha256()
        for arr in self.allocated():
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def grid_aabb(grid: SparseGrid) -> Aabb:
    return grid.aabb()


def get_or_insert(grid: SparseGrid, key) -> VoxelRecord:
    return grid.get_or_insert(key)


def drain_dirty_leaves(grid: SparseGrid) -> list[tuple]:
    return grid.drain_dirty_leaves()


def save_snapshot(grid: SparseGrid, path, known_only: bool = False) -> None:
    """Write ``i,j,k,mu,weight,state`` per allocated voxel plus a JSON sidecar."""
    path = Path(path)
    keys, mu, w, st = grid.known() if known_only else grid.allocated()
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["i", "j", "k", "mu", "weight", "state"])
        names = [STATE_NAMES[VoxelState(s)] for s in range(3)]
        for (i, j, k), m, ww, s in zip(keys.tolist(), mu.tolist(), w.tolist(), st.tolist()):
            out.writerow([i, j, k, repr(m), repr(ww), names[s]])
    path.with_suffix(".json").write_text(json.dumps({"voxel_size": grid.voxel_size}, indent=2) + "\n")


def load_snapshot(path, voxel_size: float | None = None) -> SparseGrid:
    path = Path(path)
    if voxel_size is None:
        meta = path.with_suffix(".json")
        if not meta.exists():
            raise FileNotFoundError(f"{meta} missing; pass voxel_size explicitly")
        voxel_size = json.loads(meta.read_text())["voxel_size"]
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["i", "j", "k", "mu", "weight", "state"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for n, row in enumerate(reader, start=2):
            try:
                rows.append((int(row[0]), int(row[1]), int(row[2]), float(row[3]), float(row[4]), STATE_FROM_NAME[row[5]]))
            except (ValueError, KeyError, IndexError) as exc:
                raise ValueError(f"{path}:{n}: malformed row {row}") from exc
    grid = SparseGrid(voxel_size)
    if rows:
        arr = np.array([r[:3] for r in rows], dtype=np.int64)
        idx = grid.indices(arr, create=True)
        grid._mu[idx] = [r[3] for r in rows]
        grid._weight[idx] = [r[4] for r in rows]
        grid._state[idx] = [int(r[5]) for r in rows]
    grid._dirty.clear()
    return grid
