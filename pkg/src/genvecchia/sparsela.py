"""Sparse upper-triangular matrices, reverse Cholesky and triangular solves.

``rchol(A) = P chol(P A P) P`` with P the reversal permutation. The sparse
path reverses the matrix, runs an elimination-tree symbolic pass followed by
an up-looking numeric factorization (one row of the lower factor per step),
and reverses the result back, so the factor is upper triangular.

Dense helpers at the bottom are the exact oracles used for KL divergences
and tests; they refuse matrices larger than ``DENSE_CAP``.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numba import njit

from .errors import NotPositiveDefiniteError, SingularError, SizeError

DENSE_CAP = 4096
PIVOT_RTOL = 1e-14


class _CSCWrapper:
    """Square CSC matrix with sorted, unique row indices."""

    def __init__(self, mat):
        m = sp.csc_matrix(mat, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got {m.shape}")
        m.sum_duplicates()
        m.sort_indices()
        self._m = m

    @property
    def n(self) -> int:
        return self._m.shape[0]

    @property
    def shape(self):
        return self._m.shape

    @property
    def indptr(self):
        return self._m.indptr

    @property
    def indices(self):
        return self._m.indices

    @property
    def data(self):
        return self._m.data

    @property
    def nnz(self) -> int:
        return self._m.nnz

    def to_scipy(self) -> sp.csc_matrix:
        return self._m

    def diagonal(self) -> np.ndarray:
        return self._m.diagonal()

    def triplets(self, tol: float | None = None):
        """(row, col, value) arrays of the stored entries (optionally |v| > tol)."""
        coo = self._m.tocoo()
        keep = slice(None) if tol is None else np.abs(coo.data) > tol
        return coo.row[keep], coo.col[keep], coo.data[keep]


class SparseUpper(_CSCWrapper):
    """Upper-triangular (diagonal included) sparse matrix in CSC form."""

    def __init__(self, mat, check: bool = True):
        super().__init__(mat)
        if check:
            r, c, _ = self.triplets()
            if np.any(r > c):
                raise ValueError("SparseUpper has entries below the diagonal")

    def to_dense(self) -> np.ndarray:
        return self._m.toarray()

    def offdiag_counts(self, tol: float | None = None) -> np.ndarray:
        """Off-diagonal entries per column (stored, or with |v| > tol)."""
        r, c, _ = self.triplets(tol)
        off = r != c
        return np.bincount(c[off], minlength=self.n)

    def logdet_from_diag(self) -> float:
        return float(np.sum(np.log(self.diagonal())))


class SparseSym(_CSCWrapper):
    """Symmetric matrix stored through its upper triangle."""

    def __init__(self, mat, upper_only: bool = True):
        m = sp.csc_matrix(mat, dtype=float)
        super().__init__(sp.triu(m) if upper_only else m)

    def to_dense(self) -> np.ndarray:
        u = self._m.toarray()
        return u + np.triu(u, 1).T

    def full(self) -> sp.csc_matrix:
        u = self._m
        return (u + sp.triu(u, 1).T).tocsc()


# ---------------------------------------------------------------------------
# numba kernels (CSparse-style, lower factor of an upper-stored matrix)

@njit(cache=True)
def _etree(n, Ap, Ai):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(cache=True)
def _ereach(Ap, Ai, k, parent, s, w):
    n = parent.size
    top = n
    w[k] = k
    for p in range(Ap[k], Ap[k + 1]):
        i = Ai[p]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@njit(cache=True)
def _colcounts(n, Ap, Ai, parent):
    counts = np.ones(n, dtype=np.int64)
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Ap, Ai, k, parent, s, w)
        for t in range(top, n):
            counts[s[t]] += 1
    return counts


@njit(cache=True)
def _chol_numeric(n, Ap, Ai, Ax, parent, Lp, tol):
    nnz = Lp[n]
    Li = np.empty(nnz, dtype=np.int64)
    Lx = np.empty(nnz, dtype=np.float64)
    c = Lp[:n].copy()
    x = np.zeros(n)
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Ap, Ai, k, parent, s, w)
        x[k] = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            if Ai[p] <= k:
                x[Ai[p]] = Ax[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > tol:
            return Li, Lx, k
        p = c[k]
        c[k] += 1
        Li[p] = k
        Lx[p] = np.sqrt(d)
    return Li, Lx, -1


@njit(cache=True)
def _upper_solve(n, Rp, Ri, Rx, b):
    # R x = b, R upper CSC with the diagonal last in each column
    x = b.copy()
    for j in range(n - 1, -1, -1):
        last = Rp[j + 1] - 1
        if last < Rp[j] or Ri[last] != j or Rx[last] == 0.0:
            return x, j
        x[j] /= Rx[last]
        for p in range(Rp[j], last):
            x[Ri[p]] -= Rx[p] * x[j]
    return x, -1


@njit(cache=True)
def _upper_t_solve(n, Rp, Ri, Rx, b):
    # R' x = b
    x = b.copy()
    for j in range(n):
        last = Rp[j + 1] - 1
        if last < Rp[j] or Ri[last] != j or Rx[last] == 0.0:
            return x, j
        acc = x[j]
        for p in range(Rp[j], last):
            acc -= Rx[p] * x[Ri[p]]
        x[j] = acc / Rx[last]
    return x, -1


# ---------------------------------------------------------------------------
# public API

def _reverse_upper(A: sp.csc_matrix) -> sp.csc_matrix:
    """Upper triangle of P A P given the upper triangle of A."""
    n = A.shape[0]
    coo = sp.triu(A).tocoo()
    rev = sp.csc_matrix((coo.data, (n - 1 - coo.col, n - 1 - coo.row)), shape=A.shape)
    rev.sum_duplicates()
    rev.sort_indices()
    return rev


class SymbolicFactor:
    """Elimination tree and column counts of the reversed matrix."""

    def __init__(self, A_rev_upper: sp.csc_matrix):
        n = A_rev_upper.shape[0]
        Ap = A_rev_upper.indptr.astype(np.int64)
        Ai = A_rev_upper.indices.astype(np.int64)
        self.n = n
        self.parent = _etree(n, Ap, Ai)
        self.counts = _colcounts(n, Ap, Ai, self.parent)
        self.Lp = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(self.counts, out=self.Lp[1:])

    def offdiag_counts_upper(self) -> np.ndarray:
        """Off-diagonal nonzeros per column of the (un-reversed) upper factor."""
        return (self.counts - 1)[::-1].copy()


def rchol_symbolic(A) -> SymbolicFactor:
    """Fill pattern statistics of ``rchol(A)`` without numeric work."""
    m = A.to_scipy() if isinstance(A, _CSCWrapper) else sp.csc_matrix(A)
    return SymbolicFactor(_reverse_upper(m))


def rchol(A):
    """Reverse Cholesky factor R (upper triangular, A = R R').

    Parameters
    ----------
    A : SparseSym, scipy sparse matrix or ndarray
        Symmetric positive definite. Dense input gives a dense result.

    Raises
    ------
    NotPositiveDefiniteError
        With ``pivot`` set to the failing row/column of `A` (0-based).
    """
    if isinstance(A, np.ndarray):
        return _rchol_dense(A)
    m = A.to_scipy() if isinstance(A, _CSCWrapper) else sp.csc_matrix(A)
    n = m.shape[0]
    rev = _reverse_upper(m)
    sym = SymbolicFactor(rev)
    diag = rev.diagonal()
    tol = PIVOT_RTOL * max(float(np.max(np.abs(diag))) if n else 0.0, 1e-300)
    Li, Lx, bad = _chol_numeric(n, rev.indptr.astype(np.int64), rev.indices.astype(np.int64),
                                rev.data, sym.parent, sym.Lp, tol)
    if bad >= 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (pivot at row {n - 1 - bad})", pivot=n - 1 - bad)
    cols = np.repeat(np.arange(n), sym.counts)
    R = sp.csc_matrix((Lx, (n - 1 - Li, n - 1 - cols)), shape=(n, n))
    out = SparseUpper(R, check=False)
    out.symbolic = sym
    return out


def _rchol_dense(A: np.ndarray) -> np.ndarray:
    L = dense_chol(np.ascontiguousarray(A[::-1, ::-1]), cap=None)
    return np.ascontiguousarray(L[::-1, ::-1])


def tri_solve(R, b, transpose: bool = False) -> np.ndarray:
    """Solve ``R x = b`` (or ``R' x = b``) for upper-triangular R."""
    b = np.asarray(b, dtype=float)
    if isinstance(R, np.ndarray):
        d = np.diag(R)
        if np.any(d == 0):
            raise SingularError(f"zero diagonal at {int(np.flatnonzero(d == 0)[0])}")
        return sla.solve_triangular(R, b, lower=False, trans=1 if transpose else 0)
    m = R.to_scipy() if isinstance(R, _CSCWrapper) else sp.csc_matrix(R)
    n = m.shape[0]
    fn = _upper_t_solve if transpose else _upper_solve
    args = (n, m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data)
    if b.ndim == 1:
        x, bad = fn(*args, np.ascontiguousarray(b))
        if bad >= 0:
            raise SingularError(f"zero or missing diagonal at {bad}")
        return x
    cols = [tri_solve(R, b[:, k], transpose) for k in range(b.shape[1])]
    return np.column_stack(cols)


def sparse_outer(U_rows) -> SparseSym:
    """W = U_Y U_Y' for a row slice U_Y of a sparse upper factor."""
    m = U_rows.to_scipy() if isinstance(U_rows, _CSCWrapper) else sp.csr_matrix(U_rows)
    m = sp.csr_matrix(m)
    return SparseSym(m @ m.T)


# ---------------------------------------------------------------------------
# dense oracles

def _check_cap(n: int, cap):
    if cap is not None and n > cap:
        raise SizeError(f"dense operation on n={n} exceeds the oracle cap {cap}")


def dense_chol(A, cap: int | None = DENSE_CAP) -> np.ndarray:
    """Lower Cholesky factor; raises NotPositiveDefiniteError with the pivot."""
    A = np.asarray(A, dtype=float)
    _check_cap(A.shape[0], cap)
    L, info = sla.lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (pivot {info - 1})", pivot=info - 1)
    if info < 0:
        raise ValueError(f"dpotrf argument error {info}")
    return L


def dense_solve(A, b, cap: int | None = DENSE_CAP) -> np.ndarray:
    L = dense_chol(A, cap)
    return sla.cho_solve((L, True), np.asarray(b, dtype=float))


def dense_logdet(A, cap: int | None = DENSE_CAP) -> float:
    L = dense_chol(A, cap)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def dense_inv(A, cap: int | None = DENSE_CAP) -> np.ndarray:
    L = dense_chol(A, cap)
    inv = sla.cho_solve((L, True), np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def to_dense(M) -> np.ndarray:
    if isinstance(M, np.ndarray):
        return M
    if isinstance(M, _CSCWrapper):
        return M.to_dense()
    return M.toarray()


def write_triplets_csv(M, path, tol: float | None = None) -> None:
    """Write stored entries as ``row,col,value`` with 1-based indices."""
    if isinstance(M, np.ndarray):
        r, c = np.nonzero(M if tol is None else np.abs(M) > tol)
        v = M[r, c]
    else:
        wrapped = M if isinstance(M, _CSCWrapper) else SparseUpper(M, check=False)
        r, c, v = wrapped.triplets(tol)
    with open(path, "w") as fh:
        fh.write("row,col,value\n")
        for a, b, x in zip(r, c, v):
            fh.write(f"{a + 1},{b + 1},{x:.17g}\n")
