"""Locations, grids, spatial blocking and the coord / maxmin orderings.

All indices are 0-based in the Python API. Serialized forms (JSON, CSV)
use 1-based indices; see :mod:`genvecchia.io`.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from .errors import GeometryError, SizeError

MAX_GRID_POINTS = 4_000_000

# relative tolerance under which two distances count as tied
TIE_RTOL = 1e-12


class LocationSet:
    """Immutable ordered set of distinct points in R^d.

    Parameters
    ----------
    points : array_like, shape (n, d) or (n,)
        Coordinates. A 1-D input is read as n points on the line.
    """

    __slots__ = ("_coords",)

    def __init__(self, points):
        coords = np.array(points, dtype=float, copy=True)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or coords.shape[1] < 1:
            raise GeometryError(f"expected an (n, d) array, got shape {coords.shape}")
        if coords.shape[0] < 1:
            raise GeometryError("a LocationSet needs at least one point")
        if not np.all(np.isfinite(coords)):
            raise GeometryError("coordinates must be finite")
        uniq = np.unique(coords, axis=0)
        if uniq.shape[0] != coords.shape[0]:
            raise GeometryError("duplicate locations (distance 0) are not allowed")
        coords.setflags(write=False)
        self._coords = coords

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    @property
    def n(self) -> int:
        return self._coords.shape[0]

    @property
    def d(self) -> int:
        return self._coords.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, idx):
        return self._coords[idx]

    def subset(self, idx) -> "LocationSet":
        return LocationSet(self._coords[np.asarray(idx, dtype=int)])

    def concat(self, other: "LocationSet") -> "LocationSet":
        if other.d != self.d:
            raise GeometryError(f"dimension mismatch: {self.d} vs {other.d}")
        return LocationSet(np.vstack([self._coords, other.coords]))

    def __repr__(self):
        return f"LocationSet(n={self.n}, d={self.d})"


def as_locations(s) -> LocationSet:
    return s if isinstance(s, LocationSet) else LocationSet(s)


def pairwise_distances(a, b=None) -> np.ndarray:
    """Euclidean distance matrix between the rows of `a` and `b`."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = a if b is None else np.atleast_2d(np.asarray(b, dtype=float))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def grid_locations(d: int, points_per_side: int, spacing: float = 1.0,
                   max_points: int = MAX_GRID_POINTS) -> LocationSet:
    """Regular lattice with `points_per_side` points per axis.

    Points are listed in lexicographic order (first coordinate slowest),
    starting at the origin.
    """
    if d < 1 or points_per_side < 1:
        raise GeometryError("need d >= 1 and points_per_side >= 1")
    if not spacing > 0:
        raise GeometryError("spacing must be positive")
    if points_per_side ** d > max_points:
        raise SizeError(f"grid of {points_per_side}^{d} points exceeds max_points={max_points}")
    axis = spacing * np.arange(points_per_side, dtype=float)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return LocationSet(np.column_stack([m.ravel() for m in mesh]))


def unit_grid(d: int, points_per_side: int) -> LocationSet:
    """Equidistant grid on [0, 1]^d (endpoints included)."""
    if points_per_side == 1:
        return grid_locations(d, 1, 1.0)
    return grid_locations(d, points_per_side, 1.0 / (points_per_side - 1))


def coord_order(s) -> np.ndarray:
    """Lexicographic ordering by coordinate 1, then 2, ..., then original index."""
    c = as_locations(s).coords
    # np.lexsort takes its primary key last and is stable
    return np.lexsort(c.T[::-1]).astype(int)


def maxmin_order(s) -> np.ndarray:
    """Exact greedy maximum-minimum-distance ordering.

    The first point is the one closest to the centroid. Each later point
    maximizes its distance to the nearest already-ordered point; ties go to
    the smallest original index.
    """
    c = as_locations(s).coords
    centroid = c.mean(axis=0)
    d0 = np.sqrt(((c - centroid) ** 2).sum(axis=1))
    return _maxmin_kernel(np.ascontiguousarray(c), _argmin_tied(d0), TIE_RTOL)


@nb.njit(cache=True)
def _maxmin_kernel(c, first, rtol):
    n, d = c.shape
    order = np.empty(n, dtype=np.int64)
    order[0] = first
    mind = np.empty(n)
    for j in range(n):
        acc = 0.0
        for t in range(d):
            diff = c[j, t] - c[first, t]
            acc += diff * diff
        mind[j] = np.sqrt(acc)
    mind[first] = -np.inf
    for k in range(1, n):
        top = mind.max()
        tol = rtol * max(abs(top), 1.0)
        nxt = 0
        for j in range(n):
            if mind[j] >= top - tol:
                nxt = j
                break
        order[k] = nxt
        mind[nxt] = -np.inf
        for j in range(n):
            if mind[j] > 0.0:
                acc = 0.0
                for t in range(d):
                    diff = c[j, t] - c[nxt, t]
                    acc += diff * diff
                dn = np.sqrt(acc)
                if dn < mind[j]:
                    mind[j] = dn
    return order


def _argmax_tied(v: np.ndarray) -> int:
    top = v.max()
    tol = TIE_RTOL * max(abs(top), 1.0)
    return int(np.flatnonzero(v >= top - tol)[0])


def _argmin_tied(v: np.ndarray) -> int:
    low = v.min()
    tol = TIE_RTOL * max(abs(low), 1.0)
    return int(np.flatnonzero(v <= low + tol)[0])


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=int)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def is_permutation(perm, n: int | None = None) -> bool:
    perm = np.asarray(perm)
    n = perm.size if n is None else n
    return perm.size == n and np.array_equal(np.sort(perm), np.arange(n))


def tile_index(s, tiles_per_side: int, bounds=None) -> np.ndarray:
    """Per-point tile multi-index for an axis-aligned equal tiling.

    Points lying on a tile boundary belong to the lower-index tile.

    Returns
    -------
    ndarray of int, shape (n, d)
    """
    c = as_locations(s).coords
    if tiles_per_side < 1:
        raise GeometryError("tiles_per_side must be >= 1")
    if bounds is None:
        lo, hi = c.min(axis=0), c.max(axis=0)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    width = (hi - lo) / tiles_per_side
    width = np.where(width > 0, width, 1.0)
    rel = (c - lo) / width
    t = np.ceil(rel - 1e-9).astype(int) - 1
    return np.clip(t, 0, tiles_per_side - 1)


def block_partition(s, order, blocks_per_side: int) -> list[np.ndarray]:
    """Group points into spatial tiles of the bounding box.

    Each nonempty tile becomes one block; blocks are listed in lexicographic
    tile order and points inside a block follow `order`.
    """
    s = as_locations(s)
    order = np.asarray(order, dtype=int)
    if not is_permutation(order, s.n):
        raise GeometryError("order is not a permutation of the points")
    t = tile_index(s, blocks_per_side)
    flat = np.ravel_multi_index(tuple(t.T), (blocks_per_side,) * s.d)
    rank = invert_permutation(order)
    blocks = []
    for tile in np.unique(flat):
        members = np.flatnonzero(flat == tile)
        blocks.append(members[np.argsort(rank[members], kind="stable")])
    return blocks


def check_grouping(blocks, n: int) -> None:
    """Raise unless `blocks` partition range(n) into nonempty pieces."""
    seen = np.zeros(n, dtype=int)
    for b in blocks:
        b = np.asarray(b, dtype=int)
        if b.size == 0:
            raise GeometryError("empty block in grouping")
        if b.min() < 0 or b.max() >= n:
            raise GeometryError("block index out of range")
        np.add.at(seen, b, 1)
    if not np.all(seen == 1):
        raise GeometryError("blocks must be disjoint and cover every point")


def tied_nearest(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the `k` smallest entries; near-ties broken by lower index.

    Distances that agree to a relative 1e-10 of the largest one count as
    tied. The result is sorted ascending by index.
    """
    dist = np.ascontiguousarray(dist, dtype=float)
    return _tied_nearest_kernel(dist, int(k), TIE_RTOL * 100)


@nb.njit(cache=True)
def _tied_nearest_kernel(dist, k, rtol):
    n = dist.size
    if k > n:
        k = n
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k == n:
        return np.arange(n)
    scale = dist.max()
    if scale == 0.0:
        scale = 1.0
    key = np.round(dist / (scale * rtol))
    kth = np.partition(key, k - 1)[k - 1]
    cand = np.flatnonzero(key <= kth)
    # stable sort on the key keeps lower indices first among ties
    sel = cand[np.argsort(key[cand], kind="mergesort")][:k]
    return np.sort(sel)


@nb.njit(cache=True)
def nearest_previous_all(c, m, rtol):
    """For every row i of `c`, the `m` nearest rows among 0..i-1 (tied_nearest rule).

    Returns a padded (n, m) array (-1 for missing) and per-row counts.
    """
    n, d = c.shape
    out = -np.ones((n, max(m, 1)), dtype=np.int64)
    cnt = np.zeros(n, dtype=np.int64)
    dist = np.empty(n)
    for i in range(1, n):
        for j in range(i):
            acc = 0.0
            for t in range(d):
                diff = c[j, t] - c[i, t]
                acc += diff * diff
            dist[j] = np.sqrt(acc)
        sel = _tied_nearest_kernel(dist[:i], m, rtol)
        cnt[i] = sel.size
        out[i, :sel.size] = sel
    return out, cnt


def nearest_previous(s, order, i: int, m: int) -> np.ndarray:
    """Positions among ``0..i-1`` of the `m` ordered points nearest position `i`.

    Distances are measured between points ``order[j]`` and ``order[i]``; the
    result is ascending by position and has length ``min(m, i)``.
    """
    c = as_locations(s).coords
    order = np.asarray(order, dtype=int)
    if not 0 <= i < order.size:
        raise GeometryError(f"position {i} out of range")
    if m < 0:
        raise GeometryError("m must be >= 0")
    if i == 0 or m == 0:
        return np.empty(0, dtype=int)
    prev = c[order[:i]]
    dist = np.sqrt(((prev - c[order[i]]) ** 2).sum(axis=1))
    return tied_nearest(dist, m)
