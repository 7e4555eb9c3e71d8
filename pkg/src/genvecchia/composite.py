"""Composite-likelihood baselines: full conditional (FCL) and pairwise
block (PBL) likelihoods."""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from .errors import SizeError
from .geom import as_locations, tile_index
from .kernels import CovarianceModel, matern

LOG2PI = math.log(2.0 * math.pi)
FCL_CAP = 4096


def fcl_loglik(model: CovarianceModel, z, locations, cap: int = FCL_CAP) -> float:
    """sum_i log f(z_i | z_-i) from the dense precision Q of z.

    ``z_i | z_-i ~ N(z_i - (Qz)_i / Q_ii, 1 / Q_ii)``.
    """
    c = as_locations(locations).coords
    z = np.asarray(z, dtype=float).ravel()
    n = z.size
    if n != c.shape[0]:
        raise ValueError("z and locations differ in length")
    if n > cap:
        raise SizeError(f"FCL is dense; n={n} exceeds the cap of {cap}")
    C = model.kernel(c) + model.tau2 * np.eye(n)
    cf = sla.cho_factor(C, lower=True)
    Q = sla.cho_solve(cf, np.eye(n))
    qd = np.diag(Q)
    r = Q @ z
    return float(np.sum(0.5 * np.log(qd) - 0.5 * LOG2PI - 0.5 * r * r / qd))


def tile_blocks(locations, tiles_per_side: int):
    """Group points by equal tiles of the bounding box.

    Returns
    -------
    blocks : list of ndarray
        Point indices per nonempty tile, in lexicographic tile order.
    tiles : ndarray, shape (n_blocks, d)
        Tile multi-index of each block.
    """
    s = as_locations(locations)
    t = tile_index(s, tiles_per_side)
    flat = np.ravel_multi_index(tuple(t.T), (tiles_per_side,) * s.d)
    ids = np.unique(flat)
    blocks = [np.flatnonzero(flat == u) for u in ids]
    tiles = np.array(np.unravel_index(ids, (tiles_per_side,) * s.d)).T
    return blocks, tiles


def rook_pairs(tiles) -> list[tuple[int, int]]:
    """Pairs (a, b), a < b, of blocks whose tiles differ by one step along one axis."""
    tiles = np.asarray(tiles, dtype=int)
    lookup = {tuple(t): i for i, t in enumerate(tiles)}
    pairs = []
    for i, t in enumerate(tiles):
        for ax in range(tiles.shape[1]):
            nb = list(t)
            nb[ax] += 1
            j = lookup.get(tuple(nb))
            if j is not None:
                pairs.append((min(i, j), max(i, j)))
    return sorted(pairs)


def pbl_loglik(model: CovarianceModel, z, locations, grouping, neighbor_pairs) -> float:
    """sum over neighbouring block pairs of log f(z_a, z_b).

    Parameters
    ----------
    z : array_like
        Observations indexed like `locations`.
    grouping : list of index arrays
    neighbor_pairs : iterable of (a, b) block indices
    """
    c = as_locations(locations).coords
    z = np.asarray(z, dtype=float).ravel()
    nb = len(grouping)
    pairs = [(int(a), int(b)) for a, b in neighbor_pairs]
    for a, b in pairs:
        if not (0 <= a < nb and 0 <= b < nb) or a == b:
            raise ValueError(f"invalid block pair ({a}, {b}) for {nb} blocks")
    # group pairs by joint size to batch the Cholesky factorizations
    idx = [np.concatenate([grouping[a], grouping[b]]) for a, b in pairs]
    sizes = np.array([v.size for v in idx])
    total = 0.0
    for k in np.unique(sizes):
        sel = np.stack([idx[t] for t in np.flatnonzero(sizes == k)])
        P = c[sel]
        diff = P[:, :, None, :] - P[:, None, :, :]
        dist = np.sqrt(np.einsum("abcd,abcd->abc", diff, diff))
        C = matern(model.matern, dist) + model.tau2 * np.eye(k)[None]
        L = np.linalg.cholesky(C)
        w = np.linalg.solve(L, z[sel][:, :, None])[:, :, 0]
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum()
        total += -0.5 * (logdet + np.sum(w * w) + sel.size * LOG2PI)
    return float(total)

