"""The DAG of a Vecchia plan over x = (y, z_o), d-separation, and the
structural zero patterns of U, W = U_Y U_Y' and V = rchol(W).

Vertices follow x-order: y_i comes right before z_i (when block i is
observed). Patterns are kept at block granularity and expanded to scalar
positions with :meth:`SparsityPattern.expand`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .plan import VecchiaPlan


@dataclass(frozen=True, eq=False)
class Dag:
    """Parents per vertex plus the y/z bookkeeping of a plan.

    Attributes
    ----------
    parents : tuple of tuple of int
    kind : ndarray of str, ``"y"`` or ``"z"`` per vertex
    block : ndarray of int, block index per vertex
    y_vertex, z_vertex : ndarray of int
        Vertex of y_i / z_i for each block (``-1`` when z_i is unobserved).
    """

    parents: tuple
    kind: np.ndarray
    block: np.ndarray
    y_vertex: np.ndarray
    z_vertex: np.ndarray

    @property
    def n(self) -> int:
        return len(self.parents)

    @property
    def n_blocks(self) -> int:
        return self.y_vertex.size

    def children(self) -> list[list[int]]:
        ch = [[] for _ in range(self.n)]
        for v, ps in enumerate(self.parents):
            for p in ps:
                ch[p].append(v)
        return ch

    def edges(self) -> list[tuple[int, int]]:
        return [(p, v) for v, ps in enumerate(self.parents) for p in ps]

    def has_observed_descendant(self) -> np.ndarray:
        """Per vertex: is some z-vertex a (strict) descendant?"""
        ch = self.children()
        flag = np.zeros(self.n, dtype=bool)
        for v in range(self.n - 1, -1, -1):
            flag[v] = any(self.kind[c] == "z" or flag[c] for c in ch[v])
        return flag


def dag_from_plan(plan: VecchiaPlan) -> Dag:
    """x_j -> x_i iff x_j is in the conditioning vector of x_i."""
    nb = plan.n_blocks
    y_vertex = np.empty(nb, dtype=int)
    z_vertex = np.full(nb, -1, dtype=int)
    v = 0
    for i in range(nb):
        y_vertex[i] = v
        v += 1
        if plan.observed[i]:
            z_vertex[i] = v
            v += 1
    parents = [()] * v
    kind = np.empty(v, dtype="<U1")
    block = np.empty(v, dtype=int)
    for i in range(nb):
        ps = [int(y_vertex[j]) for j in plan.qy[i]] + [int(z_vertex[j]) for j in plan.qz[i]]
        parents[y_vertex[i]] = tuple(sorted(ps))
        kind[y_vertex[i]] = "y"
        block[y_vertex[i]] = i
        if z_vertex[i] >= 0:
            parents[z_vertex[i]] = (int(y_vertex[i]),)
            kind[z_vertex[i]] = "z"
            block[z_vertex[i]] = i
    return Dag(tuple(parents), kind, block, y_vertex, z_vertex)


def dag_from_parents(parents) -> Dag:
    """Generic DAG (all vertices latent) from parent lists in topological order."""
    parents = tuple(tuple(sorted(int(p) for p in ps)) for ps in parents)
    for v, ps in enumerate(parents):
        if any(p >= v or p < 0 for p in ps):
            raise ValueError(f"parents of vertex {v} must precede it")
    n = len(parents)
    return Dag(parents, np.full(n, "y"), np.arange(n), np.arange(n), np.full(n, -1))


def d_separated(dag: Dag, A, B, C=()) -> bool:
    """Whether every path between A and B is blocked given C.

    Reachability ("Bayes ball") formulation: a path is active iff every
    non-collider on it is outside C and every collider is in C or has a
    descendant in C.
    """
    A, B, C = set(map(int, A)), set(map(int, B)), set(map(int, C))
    if A & B or A & C or B & C:
        raise ValueError("A, B and C must be disjoint")
    if not A or not B:
        return True
    ch = dag.children()
    # C together with all ancestors of C
    anc = set()
    stack = list(C)
    while stack:
        v = stack.pop()
        if v in anc:
            continue
        anc.add(v)
        stack.extend(dag.parents[v])
    UP, DOWN = 0, 1
    seen = set()
    queue = deque((a, UP) for a in A)
    while queue:
        v, direction = queue.popleft()
        if (v, direction) in seen:
            continue
        seen.add((v, direction))
        if v not in C and v in B:
            return False
        if direction == UP:
            if v not in C:
                queue.extend((p, UP) for p in dag.parents[v])
                queue.extend((c, DOWN) for c in ch[v])
        else:
            if v not in C:
                queue.extend((c, DOWN) for c in ch[v])
            if v in anc:
                queue.extend((p, UP) for p in dag.parents[v])
    return True


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    """Upper-triangular (row <= col) set of structurally nonzero blocks."""

    n: int
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def from_pairs(cls, n: int, pairs) -> "SparsityPattern":
        pairs = sorted({(min(a, b), max(a, b)) for a, b in pairs}, key=lambda t: (t[1], t[0]))
        r = np.array([a for a, _ in pairs], dtype=int)
        c = np.array([b for _, b in pairs], dtype=int)
        return cls(n, r, c)

    def pairs(self) -> set:
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    def __contains__(self, item) -> bool:
        a, b = item
        return (min(a, b), max(a, b)) in self.pairs()

    @property
    def nnz(self) -> int:
        return self.rows.size

    def offdiag_counts(self) -> np.ndarray:
        off = self.rows != self.cols
        return np.bincount(self.cols[off], minlength=self.n)

    def to_dense_mask(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=bool)
        m[self.rows, self.cols] = True
        return m

    def expand(self, sizes, triangular_diag: bool = True) -> "SparsityPattern":
        """Scalar positions for blocks of the given sizes.

        Diagonal blocks keep only their upper triangle when
        `triangular_diag` (factor blocks); off-diagonal blocks are dense.
        """
        sizes = np.asarray(sizes, dtype=int)
        start = np.r_[0, np.cumsum(sizes)]
        rows, cols = [], []
        for a, b in zip(self.rows, self.cols):
            ra = np.arange(start[a], start[a + 1])
            cb = np.arange(start[b], start[b + 1])
            rr, cc = np.meshgrid(ra, cb, indexing="ij")
            keep = (rr <= cc) if (a == b and triangular_diag) else (rr <= cc) | (a != b)
            rows.append(rr[keep])
            cols.append(cc[keep])
        total = int(start[-1])
        if not rows:
            return SparsityPattern(total, np.empty(0, int), np.empty(0, int))
        return SparsityPattern(total, np.concatenate(rows), np.concatenate(cols))

    def write_csv(self, path) -> None:
        """Coordinate list with 1-based ``row,col``."""
        with open(path, "w") as fh:
            fh.write("row,col\n")
            for a, b in zip(self.rows, self.cols):
                fh.write(f"{a + 1},{b + 1}\n")


def predict_U_pattern(dag: Dag) -> SparsityPattern:
    """Diagonal plus (j, i) for every edge x_j -> x_i, over x-vertices."""
    pairs = [(v, v) for v in range(dag.n)] + dag.edges()
    return SparsityPattern.from_pairs(dag.n, pairs)


def _latent_parents(dag: Dag) -> list[list[int]]:
    """qy as block indices, read off the DAG."""
    out = []
    for i in range(dag.n_blocks):
        ps = dag.parents[dag.y_vertex[i]]
        out.append([int(dag.block[p]) for p in ps if dag.kind[p] == "y"])
    return out


def predict_W_pattern(dag: Dag) -> SparsityPattern:
    """Moral graph on y: diagonal, latent edges and pairs sharing a latent child."""
    qy = _latent_parents(dag)
    pairs = {(i, i) for i in range(dag.n_blocks)}
    for i, ps in enumerate(qy):
        pairs.update((j, i) for j in ps)
        for a in range(len(ps)):
            for b in range(a + 1, len(ps)):
                pairs.add((ps[a], ps[b]))
    return SparsityPattern.from_pairs(dag.n_blocks, pairs)


def predict_V_pattern(dag: Dag) -> SparsityPattern:
    """Blocks (j, i), j < i, joined by a path through later y-vertices that
    have an observed descendant (plus the diagonal).

    Processed for i = l-1 down to 0 with a union-find over the admissible
    later vertices; each component carries the set of lower-index latent
    neighbours it touches.
    """
    nb = dag.n_blocks
    qy = _latent_parents(dag)
    nbrs = [set() for _ in range(nb)]
    for i, ps in enumerate(qy):
        for j in ps:
            nbrs[i].add(j)
            nbrs[j].add(i)
    obs_desc = dag.has_observed_descendant()[dag.y_vertex]
    parent = list(range(nb))
    low = [None] * nb
    active = np.zeros(nb, dtype=bool)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    pairs = {(i, i) for i in range(nb)}
    for i in range(nb - 1, -1, -1):
        roots = {find(k) for k in nbrs[i] if k > i and active[k]}
        pat = {j for j in nbrs[i] if j < i}
        for r in roots:
            pat.update(j for j in low[r] if j < i)
        pairs.update((j, i) for j in pat)
        if obs_desc[i]:
            merged = {j for j in nbrs[i] if j < i}
            for r in roots:
                merged.update(j for j in low[r] if j < i)
            for r in roots:
                parent[r] = i
                low[r] = None
            low[i] = merged
            active[i] = True
    return SparsityPattern.from_pairs(nb, pairs)
