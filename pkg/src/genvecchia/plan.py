"""Vecchia plans: grouping, ordering, conditioning vectors and their latent /
observed partition, plus constructors for the classical special cases.

A plan fixes everything except the covariance model:

* ``blocks[i]`` -- point indices (into ``locations``) of the i-th ordered block;
* ``observed[i]`` -- whether z_i is part of the data;
* ``q[i]`` -- conditioning blocks of y_i, all strictly below i;
* ``qy[i]`` / ``qz[i]`` -- the part of ``q[i]`` that y_i conditions on through
  the latent y_j or the observation z_j.

Indices are 0-based here and 1-based in the JSON form.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import PlanError
from .geom import (LocationSet, as_locations, block_partition, check_grouping,
                   TIE_RTOL, coord_order, maxmin_order, nearest_previous_all,
                   tile_index)

PARTITIONS = ("standard", "latent", "sgv")


def _as_index_tuple(v) -> tuple:
    return tuple(int(j) for j in v)


@dataclass(frozen=True)
class ConditioningRule:
    """How q(i) is chosen: ``nn`` (m nearest previous), ``first_m`` or ``explicit``."""

    kind: str = "nn"
    m: int = 0
    explicit: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("nn", "first_m", "explicit"):
            raise PlanError(f"unknown conditioning rule {self.kind!r}")
        if self.m < 0:
            raise PlanError("m must be >= 0")
        if self.kind == "explicit" and self.explicit is None:
            raise PlanError("explicit rule needs the list of conditioning vectors")


@dataclass(frozen=True, eq=False)
class VecchiaPlan:
    locations: LocationSet
    blocks: tuple
    observed: np.ndarray
    q: tuple
    qy: tuple
    qz: tuple
    ordering: np.ndarray | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=int) for b in self.blocks)
        for b in blocks:
            b.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)
        obs = np.asarray(self.observed, dtype=bool).copy()
        obs.setflags(write=False)
        object.__setattr__(self, "observed", obs)
        for name in ("q", "qy", "qz"):
            object.__setattr__(self, name, tuple(_as_index_tuple(v) for v in getattr(self, name)))
        if self.ordering is not None:
            o = np.asarray(self.ordering, dtype=int).copy()
            o.setflags(write=False)
            object.__setattr__(self, "ordering", o)
        self.validate()

    # -- structure -------------------------------------------------------
    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([b.size for b in self.blocks], dtype=int)

    @property
    def n_vertices(self) -> int:
        """b = number of blocks plus number of observed blocks."""
        return self.n_blocks + int(self.observed.sum())

    @property
    def n_obs(self) -> int:
        """Number of scalar observations n_z."""
        return int(self.sizes[self.observed].sum())

    @property
    def n_latent(self) -> int:
        return int(self.sizes.sum())

    def validate(self) -> None:
        nb = len(self.blocks)
        check_grouping(self.blocks, self.locations.n)
        if self.observed.shape != (nb,):
            raise PlanError("observed flags must have one entry per block")
        for name in ("q", "qy", "qz"):
            if len(getattr(self, name)) != nb:
                raise PlanError(f"{name} must have one entry per block")
        for i in range(nb):
            q, qy, qz = self.q[i], self.qy[i], self.qz[i]
            if len(set(q)) != len(q):
                raise PlanError(f"q({i}) has repeated entries")
            if any(j < 0 or j >= i for j in q):
                raise PlanError(f"q({i}) must be a subset of 0..{i - 1}")
            if set(qy) & set(qz):
                raise PlanError(f"qy({i}) and qz({i}) overlap")
            if set(qy) | set(qz) != set(q) or len(qy) + len(qz) != len(q):
                raise PlanError(f"qy({i}) and qz({i}) do not partition q({i})")
            bad = [j for j in qz if not self.observed[j]]
            if bad:
                raise PlanError(f"qz({i}) contains unobserved blocks {bad}")

    def observed_points(self) -> np.ndarray:
        """Location indices of the observations, in x-order."""
        if not self.observed.any():
            return np.empty(0, dtype=int)
        return np.concatenate([b for b, o in zip(self.blocks, self.observed) if o])

    def latent_points(self) -> np.ndarray:
        """Location indices of y, in x-order."""
        return np.concatenate(self.blocks)

    def with_q(self, q, qy=None, qz=None, label=None) -> "VecchiaPlan":
        q = tuple(_as_index_tuple(v) for v in q)
        if qy is None and qz is None:
            qy, qz = q, tuple(() for _ in q)
        return replace(self, q=q, qy=qy, qz=qz, label=self.label if label is None else label)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        one = lambda v: [int(j) + 1 for j in v]  # noqa: E731
        return {
            "ordering": None if self.ordering is None else one(self.ordering),
            "blocks": [one(b) for b in self.blocks],
            "observed": [int(i) + 1 for i in np.flatnonzero(self.observed)],
            "q": [one(v) for v in self.q],
            "qy": [one(v) for v in self.qy],
            "qz": [one(v) for v in self.qz],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict, locations) -> "VecchiaPlan":
        zero = lambda v: [int(j) - 1 for j in v]  # noqa: E731
        nb = len(data["blocks"])
        observed = np.zeros(nb, dtype=bool)
        observed[zero(data["observed"])] = True
        return cls(as_locations(locations), [zero(b) for b in data["blocks"]], observed,
                   [zero(v) for v in data["q"]], [zero(v) for v in data["qy"]],
                   [zero(v) for v in data["qz"]],
                   ordering=None if data.get("ordering") is None else zero(data["ordering"]))

    def digest(self) -> str:
        """Short content hash covering the plan structure and the coordinates."""
        cached = self.__dict__.get("_digest")
        if cached is None:
            h = hashlib.sha256(self.to_json().encode())
            h.update(np.ascontiguousarray(self.locations.coords).tobytes())
            cached = h.hexdigest()[:16]
            object.__setattr__(self, "_digest", cached)
        return cached

    def __repr__(self):
        return (f"VecchiaPlan(label={self.label!r}, blocks={self.n_blocks}, "
                f"observed={int(self.observed.sum())}, max|q|={self.max_q()})")

    def max_q(self) -> int:
        return max((len(v) for v in self.q), default=0)


# ---------------------------------------------------------------------------
# conditioning vectors

def block_centroids(locations, blocks) -> np.ndarray:
    c = as_locations(locations).coords
    return np.array([c[np.asarray(b)].mean(axis=0) for b in blocks])


def build_q(locations, blocks, rule: ConditioningRule) -> tuple:
    """Conditioning vectors for ordered `blocks` under `rule`.

    ``nn`` uses distances between block centroids (point distances for
    singletons); ``first_m`` gives q(i) = (0, ..., min(i, m) - 1).
    """
    nb = len(blocks)
    if rule.kind == "first_m":
        return tuple(tuple(range(min(i, rule.m))) for i in range(nb))
    if rule.kind == "explicit":
        q = tuple(tuple(sorted(int(j) for j in v)) for v in rule.explicit)
        if len(q) != nb:
            raise PlanError(f"explicit rule lists {len(q)} vectors for {nb} blocks")
        for i, v in enumerate(q):
            if any(j < 0 or j >= i for j in v) or len(set(v)) != len(v):
                raise PlanError(f"explicit q({i}) = {v} is not a subset of 0..{i - 1}")
        return q
    if rule.m == 0:
        return tuple(() for _ in range(nb))
    cent = np.ascontiguousarray(block_centroids(locations, blocks))
    nbr, cnt = nearest_previous_all(cent, rule.m, TIE_RTOL * 100)
    return tuple(tuple(nbr[i, :cnt[i]].tolist()) for i in range(nb))


def _drop_unobserved(plan, parts_z):
    dropped = []
    out = []
    for i, v in enumerate(parts_z):
        keep = tuple(j for j in v if plan.observed[j])
        if len(keep) != len(v):
            dropped.append(i)
        out.append(keep)
    if dropped:
        warnings.warn(f"unobserved blocks removed from qz of blocks {dropped[:10]}"
                      f"{'...' if len(dropped) > 10 else ''}", stacklevel=3)
    return tuple(out)


def partition_standard(plan: VecchiaPlan) -> VecchiaPlan:
    """Condition every y_i on observations only: qz = q, qy = empty."""
    qz = _drop_unobserved(plan, plan.q)
    return replace(plan, q=qz, qy=tuple(() for _ in qz), qz=qz, label="standard")


def partition_latent(plan: VecchiaPlan) -> VecchiaPlan:
    """Condition every y_i on latent variables only: qy = q, qz = empty."""
    return replace(plan, qy=plan.q, qz=tuple(() for _ in plan.q), label="latent")


def partition_sgv(plan: VecchiaPlan) -> VecchiaPlan:
    """Sparse general Vecchia partition maximizing latent conditioning.

    For each i in increasing order, k_i is the member of q(i) whose own
    latent set overlaps q(i) the most (ties: nearest block centroid, then
    smallest index); then qy(i) = {k_i} + (qy(k_i) & q(i)) and the rest of
    q(i) is conditioned on through observations. Sequential in i.
    """
    cent = block_centroids(plan.locations, plan.blocks)
    qy_out, qz_out, q_out = [], [], []
    for i, qi in enumerate(plan.q):
        if not qi:
            qy_out.append(())
            qz_out.append(())
            q_out.append(())
            continue
        qset = set(qi)
        dists = np.sqrt(((cent[list(qi)] - cent[i]) ** 2).sum(axis=1)).tolist()
        best = None
        for j, dist in zip(qi, dists):
            overlap = len(qset.intersection(qy_out[j]))
            key = (-overlap, dist, j)
            if best is None or _key_less(key, best):
                best = key
        k = best[2]
        qy = tuple(sorted({k} | (set(qy_out[k]) & qset)))
        rest = tuple(j for j in qi if j not in qy)
        qz = tuple(j for j in rest if plan.observed[j])
        if len(qz) != len(rest):
            warnings.warn(f"unobserved blocks removed from qz({i})", stacklevel=2)
        qy_out.append(qy)
        qz_out.append(qz)
        q_out.append(tuple(sorted(qy + qz)))
    return replace(plan, q=tuple(q_out), qy=tuple(qy_out), qz=tuple(qz_out), label="sgv")


def _key_less(a, b) -> bool:
    # distances within a relative 1e-12 count as tied
    if a[0] != b[0]:
        return a[0] < b[0]
    if not math.isclose(a[1], b[1], rel_tol=1e-12, abs_tol=1e-300):
        return a[1] < b[1]
    return a[2] < b[2]


def apply_partition(plan: VecchiaPlan, partition: str) -> VecchiaPlan:
    if partition == "standard":
        return partition_standard(plan)
    if partition == "latent":
        return partition_latent(plan)
    if partition == "sgv":
        return partition_sgv(plan)
    raise PlanError(f"unknown partition {partition!r}; choose from {PARTITIONS}")


def check_sgv_admissible(plan: VecchiaPlan):
    """Whether j < k both in qy(i) always implies j in qy(k).

    Returns
    -------
    ok : bool
    violation : tuple (i, j, k) of the first offending triple, or None
    """
    qy_sets = [set(v) for v in plan.qy]
    for i, v in enumerate(plan.qy):
        s = sorted(v)
        for a in range(len(s)):
            for b in range(a + 1, len(s)):
                j, k = s[a], s[b]
                if j not in qy_sets[k]:
                    return False, (i, j, k)
    return True, None


# ---------------------------------------------------------------------------
# constructors

def resolve_ordering(locations, ordering) -> np.ndarray:
    if isinstance(ordering, str):
        if ordering == "coord":
            return coord_order(locations)
        if ordering == "maxmin":
            return maxmin_order(locations)
        raise PlanError(f"unknown ordering {ordering!r}")
    return np.asarray(ordering, dtype=int)


def vecchia_plan(locations, m: int, *, ordering="maxmin", conditioning="nn",
                 partition="sgv", observed=None) -> VecchiaPlan:
    """Singleton-block plan: order points, build q, then partition it.

    Parameters
    ----------
    locations : LocationSet or array_like
    m : int
        Conditioning budget per block.
    ordering : {"maxmin", "coord"} or permutation array
    conditioning : {"nn", "first_m"}
    partition : {"standard", "latent", "sgv"}
    observed : bool array over the original points, optional
        Defaults to every point observed.
    """
    s = as_locations(locations)
    perm = resolve_ordering(s, ordering)
    blocks = [np.array([p]) for p in perm]
    obs = np.ones(s.n, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)[perm]
    q = build_q(s, blocks, ConditioningRule(conditioning, m))
    base = VecchiaPlan(s, blocks, obs, q, q, tuple(() for _ in q), ordering=perm)
    plan = apply_partition(base, partition)
    meta = {"m": m, "ordering": ordering if isinstance(ordering, str) else "custom",
            "conditioning": conditioning, "partition": partition}
    return replace(plan, meta=meta)


def exact_plan(locations, ordering="coord", partition="latent") -> VecchiaPlan:
    """Full conditioning q(i) = (0, ..., i-1): recovers the exact model."""
    s = as_locations(locations)
    return vecchia_plan(s, s.n, ordering=ordering, conditioning="first_m", partition=partition)


def make_independent_blocks(locations, blocks_per_side: int, ordering="coord") -> VecchiaPlan:
    """Spatial tiles, every q(i) empty, every block observed."""
    s = as_locations(locations)
    perm = resolve_ordering(s, ordering)
    blocks = block_partition(s, perm, blocks_per_side)
    empty = tuple(() for _ in blocks)
    return VecchiaPlan(s, blocks, np.ones(len(blocks), dtype=bool), empty, empty, empty,
                       ordering=perm, label="independent")


def make_blocked_plan(locations, blocks_per_side: int, m: int, partition="sgv",
                      ordering="coord", conditioning="nn") -> VecchiaPlan:
    """Tiled blocks (r_i > 1) ordered by tile, with block-level conditioning."""
    s = as_locations(locations)
    perm = resolve_ordering(s, ordering)
    blocks = block_partition(s, perm, blocks_per_side)
    q = build_q(s, blocks, ConditioningRule(conditioning, m))
    base = VecchiaPlan(s, blocks, np.ones(len(blocks), dtype=bool), q, q,
                       tuple(() for _ in q), ordering=perm)
    return apply_partition(base, partition)


def make_ar(locations, m: int) -> VecchiaPlan:
    """Latent AR(m): coord order, q(i) = qy(i) = (i-m, ..., i-1)."""
    s = as_locations(locations)
    perm = coord_order(s)
    q = tuple(tuple(range(max(0, i - m), i)) for i in range(s.n))
    return VecchiaPlan(s, [np.array([p]) for p in perm], np.ones(s.n, dtype=bool),
                       q, q, tuple(() for _ in q), ordering=perm, label=f"AR({m})")


def _knots_first(data, knots) -> tuple[LocationSet, int]:
    data = as_locations(data)
    knots = as_locations(knots) if not isinstance(knots, LocationSet) else knots
    if knots.d != data.d:
        raise PlanError("knots and data must have the same dimension")
    return knots.concat(data), knots.n


def make_mpp(locations, knots) -> VecchiaPlan:
    """Modified predictive process.

    Block 0 holds the (unobserved) knots; each data point is its own block
    conditioning only on y_0. Data points keep their input order.
    """
    knots = np.atleast_2d(np.asarray(knots.coords if isinstance(knots, LocationSet) else knots,
                                     dtype=float))
    if knots.size == 0:
        raise PlanError("the predictive process needs at least one knot")
    allpts, nk = _knots_first(locations, knots)
    nd = allpts.n - nk
    blocks = [np.arange(nk)] + [np.array([nk + i]) for i in range(nd)]
    observed = np.r_[False, np.ones(nd, dtype=bool)]
    q = ((),) + tuple((0,) for _ in range(nd))
    return VecchiaPlan(allpts, blocks, observed, q, q, tuple(() for _ in q), label="MPP")


def make_fsa(locations, knots, blocks_per_side: int, ordering="coord") -> VecchiaPlan:
    """Full-scale approximation: unobserved knot block, then spatial tiles of
    the data, each conditioning only on the knot block."""
    knots = np.atleast_2d(np.asarray(knots.coords if isinstance(knots, LocationSet) else knots,
                                     dtype=float))
    if knots.size == 0:
        raise PlanError("the full-scale approximation needs at least one knot")
    data = as_locations(locations)
    allpts, nk = _knots_first(data, knots)
    perm = resolve_ordering(data, ordering)
    tiles = block_partition(data, perm, blocks_per_side)
    blocks = [np.arange(nk)] + [t + nk for t in tiles]
    observed = np.r_[False, np.ones(len(tiles), dtype=bool)]
    q = ((),) + tuple((0,) for _ in tiles)
    return VecchiaPlan(allpts, blocks, observed, q, q, tuple(() for _ in q), label="FSA")


def _split_region(lo, hi, J):
    """Child boxes of [lo, hi] for a J-way split."""
    d = lo.size
    k = round(J ** (1.0 / d))
    if k ** d == J:
        grids = np.meshgrid(*([np.arange(k)] * d), indexing="ij")
        idx = np.column_stack([g.ravel() for g in grids])
        w = (hi - lo) / k
        return [(lo + t * w, lo + (t + 1) * w) for t in idx]
    axis = int(np.argmax(hi - lo))
    w = (hi[axis] - lo[axis]) / J
    out = []
    for t in range(J):
        a, b = lo.copy(), hi.copy()
        a[axis] = lo[axis] + t * w
        b[axis] = lo[axis] + (t + 1) * w
        out.append((a, b))
    return out


def _child_membership(coords, lo, hi, J):
    d = lo.size
    k = round(J ** (1.0 / d))
    if k ** d == J:
        t = tile_index(coords, k, bounds=(lo, hi))
        return np.ravel_multi_index(tuple(t.T), (k,) * d)
    axis = int(np.argmax(hi - lo))
    sub = coords[:, [axis]]
    return tile_index(sub, J, bounds=(lo[[axis]], hi[[axis]]))[:, 0]


def make_mra(locations, J: int, levels: int, r_per_region: int) -> VecchiaPlan:
    """Multi-resolution approximation over a recursive J-way tiling.

    Regions at depths ``0..levels-1`` each receive up to `r_per_region`
    knots, picked by maxmin among the not-yet-used data points inside the
    region. Points left over at depth `levels` form the leaf blocks. Blocks
    are numbered breadth-first and q(i) lists all ancestor blocks. Regions
    with no remaining points are dropped.
    """
    if J < 2 or levels < 1 or r_per_region < 1:
        raise PlanError("need J >= 2, levels >= 1, r_per_region >= 1")
    s = as_locations(locations)
    c = s.coords
    lo, hi = c.min(axis=0), c.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    blocks, q = [], []
    # queue entries: (point indices available in region, lo, hi, depth, ancestors)
    queue = [(np.arange(s.n), lo, hi, 0, ())]
    head = 0
    while head < len(queue):
        pts, rlo, rhi, depth, anc = queue[head]
        head += 1
        if pts.size == 0:
            continue
        if depth == levels:
            order = coord_order(c[pts])
            blocks.append(pts[order])
            q.append(anc)
            continue
        order = maxmin_order(c[pts]) if pts.size > 1 else np.array([0])
        chosen = pts[order[:r_per_region]]
        rest = np.setdiff1d(pts, chosen)
        me = len(blocks)
        blocks.append(chosen)
        q.append(anc)
        if rest.size == 0:
            continue
        member = _child_membership(c[rest], rlo, rhi, J)
        for ci, (clo, chi) in enumerate(_split_region(rlo, rhi, J)):
            queue.append((rest[member == ci], clo, chi, depth + 1, anc + (me,)))
    observed = np.ones(len(blocks), dtype=bool)
    return VecchiaPlan(s, blocks, observed, q, q, tuple(() for _ in q),
                       label=f"MRA(J={J},levels={levels})")


# ---------------------------------------------------------------------------
# the seven-block illustration used throughout the tests and demos

TOY_Q = ((), (0,), (0, 1), (0, 2), (1, 3), (2, 4), (4, 5))


def toy_plan(partition: str = "latent") -> VecchiaPlan:
    """Seven singleton blocks on a line, fully observed, with the fixed
    conditioning vectors of the classic illustration (0-based)."""
    s = LocationSet(np.arange(7.0))
    blocks = [np.array([i]) for i in range(7)]
    base = VecchiaPlan(s, blocks, np.ones(7, dtype=bool), TOY_Q, TOY_Q,
                       tuple(() for _ in TOY_Q), ordering=np.arange(7))
    return apply_partition(base, partition)
