"""Sparse factor U of a general Vecchia approximation, the integrated
likelihood of the observations, and the posterior of y given z.

x-order interleaves y_i and z_i (z_i right after y_i when block i is
observed). Each vertex x_i has the Gaussian conditional
``x_i | x_g(i) ~ N(B_i x_g(i), D_i)``; U collects, column by column,
``D_i^{-1/2}`` on the diagonal and ``-B_i' D_i^{-1/2}`` in the rows of the
parents, with ``D_i^{-1/2} = chol(D_i)^{-T}`` upper triangular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConditioningError, ModelError, SizeError
from .geom import pairwise_distances
from .kernels import CovarianceModel, cross_cov, matern
from .plan import VecchiaPlan
from .sparsela import SparseSym, SparseUpper, rchol, sparse_outer, tri_solve

LOG2PI = math.log(2.0 * math.pi)
NOISELESS_RTOL = 1e-12


@dataclass(frozen=True)
class XLayout:
    """Scalar bookkeeping of x for a plan."""

    vertex_block: np.ndarray    # block of each vertex
    vertex_is_z: np.ndarray     # bool per vertex
    vertex_start: np.ndarray    # first scalar position of each vertex (len b + 1)
    y_vertex: np.ndarray        # vertex of y_i
    z_vertex: np.ndarray        # vertex of z_i or -1
    y_rows: np.ndarray          # scalar positions of y in x
    z_rows: np.ndarray          # scalar positions of z_o in x
    point: np.ndarray           # location index of each scalar position

    @property
    def n(self) -> int:
        return int(self.vertex_start[-1])


def x_layout(plan: VecchiaPlan) -> XLayout:
    return _plan_cache(plan, "layout", _x_layout)


def _plan_cache(plan, key, builder):
    # plans are immutable, so derived structure is memoized on the instance
    cache = plan.__dict__.get("_derived")
    if cache is None:
        cache = {}
        object.__setattr__(plan, "_derived", cache)
    if key not in cache:
        cache[key] = builder(plan)
    return cache[key]


def _x_layout(plan: VecchiaPlan) -> XLayout:
    nb = plan.n_blocks
    vb, vz, sizes = [], [], []
    y_vertex = np.empty(nb, dtype=int)
    z_vertex = np.full(nb, -1, dtype=int)
    for i in range(nb):
        y_vertex[i] = len(vb)
        vb.append(i)
        vz.append(False)
        sizes.append(plan.blocks[i].size)
        if plan.observed[i]:
            z_vertex[i] = len(vb)
            vb.append(i)
            vz.append(True)
            sizes.append(plan.blocks[i].size)
    start = np.r_[0, np.cumsum(sizes)].astype(int)
    vz = np.array(vz, dtype=bool)
    pos = np.arange(start[-1])
    owner = np.repeat(np.arange(len(vb)), sizes)
    point = np.concatenate([plan.blocks[b] for b in vb])
    return XLayout(np.array(vb, dtype=int), vz, start, y_vertex, z_vertex,
                   pos[~vz[owner]], pos[vz[owner]], point)


@dataclass(eq=False)
class FactorSet:
    """U and the matrices derived from it for one (plan, model) pair."""

    plan: VecchiaPlan
    model: CovarianceModel
    layout: XLayout
    U: SparseUpper
    _W: SparseSym | None = field(default=None, repr=False)
    _V: SparseUpper | None = field(default=None, repr=False)

    @property
    def U_Y(self) -> sp.csr_matrix:
        return self.U.to_scipy().tocsr()[self.layout.y_rows]

    @property
    def U_Z(self) -> sp.csr_matrix:
        return self.U.to_scipy().tocsr()[self.layout.z_rows]

    @property
    def W(self) -> SparseSym:
        if self._W is None:
            self._W = sparse_outer(self.U_Y)
        return self._W

    @property
    def V(self) -> SparseUpper:
        if self._V is None:
            self._V = rchol(self.W)
        return self._V

    def logdet_D(self) -> float:
        """sum_i log|D_i| = -2 sum log diag(U)."""
        return -2.0 * float(np.sum(np.log(self.U.diagonal())))


def _check_noise(plan: VecchiaPlan, model: CovarianceModel):
    if plan.observed.any() and model.tau2 <= NOISELESS_RTOL * model.sigma2:
        raise ModelError(
            "tau2 is (numerically) zero but the plan has observed blocks; z equals y "
            "and the general formulation is singular. Use loglik(), which falls back "
            "to standard Vecchia on z for noiseless models.")


def assemble_U(plan: VecchiaPlan, model: CovarianceModel) -> FactorSet:
    """Build the sparse upper-triangular factor U with inv(C_hat) = U U'."""
    _check_noise(plan, model)
    lay = x_layout(plan)
    if np.all(plan.sizes == 1):
        rows, cols, vals = _assemble_singletons(plan, model, lay)
    else:
        rows, cols, vals = _assemble_blocks(plan, model, lay)
    n = lay.n
    U = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    return FactorSet(plan, model, lay, SparseUpper(U, check=False))


def _z_columns(plan, model, lay):
    """Columns of z-vertices: B = I, D = tau2 I, closed form."""
    zi = np.flatnonzero(plan.observed)
    rows, cols, vals = [], [], []
    if zi.size == 0:
        return rows, cols, vals
    inv_tau = 1.0 / math.sqrt(model.tau2)
    r = plan.sizes[zi]
    off = np.arange(r.sum()) - np.repeat(np.cumsum(r) - r, r)
    zs = np.repeat(lay.vertex_start[lay.z_vertex[zi]], r) + off
    ys = np.repeat(lay.vertex_start[lay.y_vertex[zi]], r) + off
    rows += [zs, ys]
    cols += [zs, zs]
    vals += [np.full(zs.size, inv_tau), np.full(zs.size, -inv_tau)]
    return rows, cols, vals


def _singleton_structure(plan):
    """Model-independent pieces of the singleton assembly, grouped by |g(i)|."""
    lay = x_layout(plan)
    coords = plan.locations.coords
    pt = np.array([b[0] for b in plan.blocks])
    nb = plan.n_blocks
    gsize = np.array([len(plan.qy[i]) + len(plan.qz[i]) for i in range(nb)])
    # dense conditioning sets evaluate the kernel on more pairs than the
    # whole point set has; then one n x n evaluation plus gathers is cheaper
    uniq = np.unique(gsize, return_counts=True)
    dense = int(np.sum(uniq[1] * (uniq[0] + 1) ** 2)) > 4 * nb * nb
    full = pairwise_distances(coords[pt]) if dense else None
    groups = []
    for k in np.unique(gsize):
        idx = np.flatnonzero(gsize == k)
        ycol = lay.vertex_start[lay.y_vertex[idx]]
        if k == 0:
            groups.append((int(k), idx, ycol, None, None, None))
            continue
        gblk = np.empty((idx.size, k), dtype=int)
        gz = np.empty((idx.size, k), dtype=bool)
        for t, i in enumerate(idx):
            verts = sorted([(lay.y_vertex[j], j, False) for j in plan.qy[i]]
                           + [(lay.z_vertex[j], j, True) for j in plan.qz[i]])
            gblk[t] = [v[1] for v in verts]
            gz[t] = [v[2] for v in verts]
        gvert = np.where(gz, lay.z_vertex[gblk], lay.y_vertex[gblk])
        members = np.concatenate([idx[:, None], gblk], axis=1)
        if dense:
            dist = members
        else:
            P = coords[pt[members]]
            diff = P[:, :, None, :] - P[:, None, :, :]
            dist = np.sqrt(np.einsum("abcd,abcd->abc", diff, diff))
        groups.append((int(k), idx, ycol, lay.vertex_start[gvert].ravel(), gz, dist))
    return groups, full


def _assemble_singletons(plan, model, lay):
    rows, cols, vals = _z_columns(plan, model, lay)
    groups, full = _plan_cache(plan, "singletons", _singleton_structure)
    K = None if full is None else matern(model.matern, full)
    for k, idx, ycol, grows, gz, dist in groups:
        if k == 0:
            rows.append(ycol)
            cols.append(ycol)
            vals.append(np.full(idx.size, 1.0 / math.sqrt(model.sigma2)))
            continue
        # with a full kernel, `dist` holds block indices to gather instead
        C = matern(model.matern, dist) if K is None else K[dist[:, :, None], dist[:, None, :]]
        if model.tau2 > 0:
            diag = np.arange(1, k + 1)
            C[:, diag, diag] += gz * model.tau2
        Cgg = C[:, 1:, 1:]
        c = C[:, 1:, 0]
        try:
            L = np.linalg.cholesky(Cgg)
        except np.linalg.LinAlgError:
            bad = _first_bad(Cgg)
            raise ConditioningError(
                f"conditioning covariance of block {idx[bad]} is not positive definite",
                vertex=int(idx[bad])) from None
        w = np.linalg.solve(L, c[:, :, None])[:, :, 0]
        B = np.linalg.solve(np.swapaxes(L, 1, 2), w[:, :, None])[:, :, 0]
        D = C[:, 0, 0] - np.einsum("ab,ab->a", w, w)
        if np.any(~(D > 0)):
            bad = int(np.flatnonzero(~(D > 0))[0])
            raise ConditioningError(
                f"conditional variance of block {idx[bad]} is not positive", vertex=int(idx[bad]))
        dinv = 1.0 / np.sqrt(D)
        rows.append(ycol)
        cols.append(ycol)
        vals.append(dinv)
        rows.append(grows)
        cols.append(np.repeat(ycol, k))
        vals.append((-B * dinv[:, None]).ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _first_bad(mats):
    for t in range(mats.shape[0]):
        try:
            np.linalg.cholesky(mats[t])
        except np.linalg.LinAlgError:
            return t
    return 0


def _assemble_blocks(plan, model, lay):
    coords = plan.locations.coords
    rows, cols, vals = _z_columns(plan, model, lay)
    for i in range(plan.n_blocks):
        Si = coords[plan.blocks[i]]
        r = Si.shape[0]
        ystart = lay.vertex_start[lay.y_vertex[i]]
        ycols = ystart + np.arange(r)
        verts = sorted([(lay.y_vertex[j], j, False) for j in plan.qy[i]]
                       + [(lay.z_vertex[j], j, True) for j in plan.qz[i]])
        Cii = cross_cov(model, Si, Si, "yy")
        if verts:
            Sg = np.vstack([coords[plan.blocks[j]] for _, j, _ in verts])
            zmask = np.concatenate([np.full(plan.blocks[j].size, isz) for _, j, isz in verts])
            Cgg = cross_cov(model, Sg, Sg, "yy") + np.diag(model.tau2 * zmask)
            Cig = cross_cov(model, Si, Sg, "yy")
            try:
                Lg = sla.cholesky(Cgg, lower=True)
            except np.linalg.LinAlgError:
                raise ConditioningError(
                    f"conditioning covariance of block {i} is not positive definite",
                    vertex=i) from None
            Wt = sla.solve_triangular(Lg, Cig.T, lower=True)
            B = sla.solve_triangular(Lg.T, Wt, lower=False).T
            D = Cii - Wt.T @ Wt
        else:
            B = None
            D = Cii
        try:
            LD = sla.cholesky(0.5 * (D + D.T), lower=True)
        except np.linalg.LinAlgError:
            raise ConditioningError(f"conditional covariance of block {i} is not positive "
                                    "definite", vertex=i) from None
        # D^{-1/2} = LD^{-T}, upper triangular
        Dih = sla.solve_triangular(LD, np.eye(r), lower=True).T
        rr, cc = np.triu_indices(r)
        rows.append(ystart + rr)
        cols.append(ystart + cc)
        vals.append(Dih[rr, cc])
        if verts:
            gpos = np.concatenate([lay.vertex_start[v] + np.arange(plan.blocks[j].size)
                                   for v, j, _ in verts])
            off = -B.T @ Dih
            gr, gc = np.meshgrid(gpos, ycols, indexing="ij")
            rows.append(gr.ravel())
            cols.append(gc.ravel())
            vals.append(off.ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


# ---------------------------------------------------------------------------
# likelihood and posterior

@dataclass(frozen=True)
class LoglikResult:
    """Terms of -2 log f_hat(z_o); ``loglik`` is minus half their sum."""

    loglik: float
    logdet_D: float
    logdet_V: float          # 2 * sum log diag(V)
    ztz: float               # z~' z~
    quad: float              # (V^-1 U_Y z~)' (V^-1 U_Y z~)
    n_obs: int
    plan_digest: str = ""

    @property
    def const(self) -> float:
        return self.n_obs * LOG2PI

    def to_dict(self) -> dict:
        return {"loglik": self.loglik, "logdet_D": self.logdet_D, "logdet_V": self.logdet_V,
                "ztz": self.ztz, "quad": self.quad, "n_obs": self.n_obs,
                "const": self.const, "plan_digest": self.plan_digest}


def _check_z(factors: FactorSet, z) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.size != factors.layout.z_rows.size:
        raise ValueError(f"z has length {z.size}, plan has {factors.layout.z_rows.size} "
                         "observations")
    return z


def integrated_loglik(factors: FactorSet, z) -> LoglikResult:
    """log f_hat(z_o) with y integrated out analytically.

    `z` lists the observations in x-order (see ``plan.observed_points()``).
    """
    z = _check_z(factors, z)
    zt = factors.U_Z.T @ z
    ld = factors.logdet_D()
    ztz = float(zt @ zt)
    if factors.layout.y_rows.size:
        s = tri_solve(factors.V, factors.U_Y @ zt)
        lv = 2.0 * float(np.sum(np.log(factors.V.diagonal())))
        quad = float(s @ s)
    else:
        lv = quad = 0.0
    n = z.size
    total = ld + lv + ztz - quad + n * LOG2PI
    return LoglikResult(-0.5 * total, ld, lv, ztz, quad, n, factors.plan.digest())


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """y | z ~ N(mean, inv(V V')), y in x-order (``plan.latent_points()``)."""

    mean: np.ndarray
    V: SparseUpper
    variances: np.ndarray | None = None
    plan_digest: str = ""


def posterior_summary(factors: FactorSet, z, variances: bool = False,
                      cap: int = 4096) -> PosteriorSummary:
    """Posterior mean -inv(W) U_Y z~ via two triangular solves with V.

    ``variances=True`` adds marginal posterior variances by dense inversion
    (expensive; limited to `cap` latent variables).
    """
    z = _check_z(factors, z)
    zt = factors.U_Z.T @ z
    t = factors.U_Y @ zt
    s = tri_solve(factors.V, t)
    mu = -tri_solve(factors.V, s, transpose=True)
    var = None
    if variances:
        from .sparsela import dense_inv
        var = np.diag(dense_inv(factors.W.to_dense(), cap=cap)).copy()
    return PosteriorSummary(mu, factors.V, var, factors.plan.digest())


def is_noiseless(model: CovarianceModel) -> bool:
    return model.tau2 <= NOISELESS_RTOL * model.sigma2


def noiseless_plan(plan: VecchiaPlan) -> VecchiaPlan:
    """Latent-only plan on y with qy = q, used when z = y.

    Conditioning on z_j is conditioning on y_j, so qz folds into qy. The
    blocks that were observed become the data; see :func:`noiseless_factors`.
    """
    empty = tuple(() for _ in plan.q)
    return VecchiaPlan(plan.locations, plan.blocks, np.zeros(plan.n_blocks, dtype=bool),
                       plan.q, plan.q, empty, ordering=plan.ordering,
                       label=plan.label + "+noiseless",
                       meta={**plan.meta, "noiseless_of": plan.digest()})


def noiseless_factors(plan: VecchiaPlan, model: CovarianceModel) -> FactorSet:
    """Factors of standard Vecchia on y (C = K) with the rows of observed
    blocks playing the role of z and the remaining blocks integrated out."""
    base = noiseless_plan(plan)
    f = assemble_U(base, CovarianceModel(model.matern, 0.0))
    lay = f.layout
    obs_rows = [lay.vertex_start[lay.y_vertex[i]] + np.arange(plan.blocks[i].size)
                for i in np.flatnonzero(plan.observed)]
    z_rows = np.concatenate(obs_rows) if obs_rows else np.empty(0, dtype=int)
    y_rows = np.setdiff1d(np.arange(lay.n), z_rows)
    f.layout = replace(lay, y_rows=y_rows, z_rows=z_rows)
    return f


def factors_for(plan: VecchiaPlan, model: CovarianceModel) -> FactorSet:
    """assemble_U, or the noiseless reformulation when tau2 is numerically zero."""
    if is_noiseless(model) and plan.observed.any():
        return noiseless_factors(plan, model)
    return assemble_U(plan, model)


def loglik(plan: VecchiaPlan, model: CovarianceModel, z) -> LoglikResult:
    """Integrated Vecchia log-likelihood of z (in x-order).

    When tau2 is numerically zero this is standard Vecchia on z,
    ``prod_i f(z_i | z_q(i))`` with unobserved blocks integrated out.
    """
    res = integrated_loglik(factors_for(plan, model), z)
    return replace(res, plan_digest=plan.digest())


# ---------------------------------------------------------------------------
# dense oracles and KL divergences

ORACLE_CAP = 4096


def _cap(n: int, cap: int):
    if n > cap:
        raise SizeError(f"dense oracle on {n} variables exceeds the cap of {cap}; "
                        "use a smaller configuration")


def joint_cov_x(plan: VecchiaPlan, model: CovarianceModel, cap: int = ORACLE_CAP) -> np.ndarray:
    """Exact covariance of x in x-order: K everywhere, plus tau2 on the
    diagonal of z-entries."""
    lay = x_layout(plan)
    _cap(lay.n, cap)
    pts = plan.locations.coords[lay.point]
    C = model.kernel(pts)
    isz = np.zeros(lay.n, dtype=bool)
    isz[lay.z_rows] = True
    C[np.diag_indices(lay.n)] += model.tau2 * isz
    return C


def dense_loglik(model: CovarianceModel, locations, z) -> float:
    """log N(z; 0, K + tau2 I) by dense Cholesky."""
    from .geom import as_locations
    c = as_locations(locations).coords
    z = np.asarray(z, dtype=float).ravel()
    _cap(z.size, ORACLE_CAP)
    C = model.kernel(c) + model.tau2 * np.eye(z.size)
    L = sla.cholesky(C, lower=True)
    w = sla.solve_triangular(L, z, lower=True)
    return -0.5 * (2.0 * np.sum(np.log(np.diag(L))) + w @ w + z.size * LOG2PI)


def conditional_regression(plan: VecchiaPlan, model: CovarianceModel):
    """Dense B (n_x by n_x, row x_i holds B_i at its parents) and the list
    of D_i blocks, computed vertex by vertex from the exact joint of x."""
    lay = x_layout(plan)
    C = joint_cov_x(plan, model)
    n = lay.n
    B = np.zeros((n, n))
    Ds = []
    nv = lay.vertex_block.size
    for v in range(nv):
        rows = np.arange(lay.vertex_start[v], lay.vertex_start[v + 1])
        i = lay.vertex_block[v]
        if lay.vertex_is_z[v]:
            par = [lay.y_vertex[i]]
        else:
            par = sorted([lay.y_vertex[j] for j in plan.qy[i]]
                         + [lay.z_vertex[j] for j in plan.qz[i]])
        if par:
            g = np.concatenate([np.arange(lay.vertex_start[p], lay.vertex_start[p + 1])
                                for p in par])
            Bi = np.linalg.solve(C[np.ix_(g, g)], C[np.ix_(g, rows)]).T
            B[np.ix_(rows, g)] = Bi
            Ds.append(C[np.ix_(rows, rows)] - Bi @ C[np.ix_(g, rows)])
        else:
            Ds.append(C[np.ix_(rows, rows)].copy())
    return B, Ds, lay


def brute_force_precision(plan: VecchiaPlan, model: CovarianceModel) -> np.ndarray:
    """(I - B)' D^{-1} (I - B) of the product of conditionals."""
    B, Ds, _ = conditional_regression(plan, model)
    A = np.eye(B.shape[0]) - B
    Dinv = sla.block_diag(*[np.linalg.inv(D) for D in Ds])
    return A.T @ Dinv @ A


def _gauss_kl_from_factor(C: np.ndarray, G_factor: np.ndarray) -> float:
    """KL(N(0, C) || N(0, inv(G G'))) for square G via eigenvalues of G'CG."""
    L = sla.cholesky(C, lower=True)
    M = L.T @ G_factor
    lam = sla.svdvals(M) ** 2
    return 0.5 * float(np.sum(lam - 1.0 - np.log(lam)))


def kl_joint_x(plan: VecchiaPlan, model: CovarianceModel, cap: int = ORACLE_CAP) -> float:
    """KL(f(x) || f_hat(x)) with inv(C_hat) = U U', by dense algebra.

    For a noiseless model x reduces to y = z (standard Vecchia on z).
    """
    f = factors_for(plan, model)
    _cap(f.layout.n, cap)
    C = joint_cov_x(f.plan, f.model, cap)
    return _gauss_kl_from_factor(C, f.U.to_dense())


def approx_cov_x(factors: FactorSet) -> np.ndarray:
    """C_hat = inv(U U') = inv(U)' inv(U), dense."""
    Ui = sla.solve_triangular(factors.U.to_dense(), np.eye(factors.layout.n), lower=False)
    return Ui.T @ Ui


def kl_observed_z(plan: VecchiaPlan, model: CovarianceModel, cap: int = ORACLE_CAP) -> float:
    """KL(f(z_o) || f_hat(z_o)), marginalizing C_hat = inv(U U') densely."""
    f = factors_for(plan, model)
    _cap(f.layout.n, cap)
    rows = f.layout.z_rows
    if rows.size == 0:
        raise ModelError("the plan has no observed blocks")
    # inv(U U')[rows, rows] = Y'Y with Y = inv(U) E_rows
    E = np.zeros((f.layout.n, rows.size))
    E[rows, np.arange(rows.size)] = 1.0
    Y = sla.solve_triangular(f.U.to_dense(), E, lower=False)
    Chat_z = Y.T @ Y
    pts = plan.locations.coords[f.layout.point[rows]]
    Cz = f.model.kernel(pts)
    Cz[np.diag_indices(rows.size)] += f.model.tau2
    Lh = sla.cholesky(Chat_z, lower=True)
    # KL = 1/2 [tr(Chat^-1 C) - n + logdet Chat - logdet C]
    M = sla.solve_triangular(Lh, sla.cholesky(Cz, lower=True), lower=True)
    lam = sla.svdvals(M) ** 2
    return 0.5 * float(np.sum(lam - 1.0 - np.log(lam)))
