"""Dense reference computations shared by the unit and acceptance tests.

Nothing here touches the sparse factor U: every oracle works from the
exact covariance of x and textbook Gaussian identities.
"""

import numpy as np
import scipy.linalg as sla

from genvecchia.dag import dag_from_plan
from genvecchia.inference import x_layout

LOG2PI = np.log(2 * np.pi)


def gauss_logpdf_prec(x, Q):
    """log N(x; 0, inv(Q))."""
    L = np.linalg.cholesky(Q)
    return 0.5 * (2 * np.log(np.diag(L)).sum() - x @ Q @ x - x.size * LOG2PI)


def precision_oracle(plan, model):
    """Precision of the product of conditionals, built from the DAG.

    Each vertex x_v (y_i or z_i) is regressed on its parents under the
    exact joint covariance: (I - B)' inv(D) (I - B).
    """
    dag = dag_from_plan(plan)
    sizes = np.array([plan.blocks[b].size for b in dag.block])
    start = np.r_[0, np.cumsum(sizes)]
    n = int(start[-1])
    pts = np.concatenate([plan.locations.coords[plan.blocks[b]] for b in dag.block])
    isz = np.concatenate([np.full(s, k == "z") for s, k in zip(sizes, dag.kind)])
    C = model.kernel(pts) + model.tau2 * np.diag(isz.astype(float))
    A = np.eye(n)
    Dinv = np.zeros((n, n))
    for v in range(dag.n):
        r = np.arange(start[v], start[v + 1])
        D = C[np.ix_(r, r)]
        if dag.parents[v]:
            g = np.concatenate([np.arange(start[p], start[p + 1]) for p in dag.parents[v]])
            Bv = np.linalg.solve(C[np.ix_(g, g)], C[np.ix_(g, r)]).T
            A[np.ix_(r, g)] = -Bv
            D = D - Bv @ C[np.ix_(g, r)]
        Dinv[np.ix_(r, r)] = np.linalg.inv(D)
    return A.T @ Dinv @ A


def posterior_identity_loglik(plan, model, z):
    """log f_hat(z) = log N(x0; 0, C_hat) - log N(0; mu, inv(W)) with y = 0.

    The joint precision comes from the product of conditionals, assembled
    by dense regressions.
    """
    Q = precision_oracle(plan, model)
    lay = x_layout(plan)
    x0 = np.zeros(lay.n)
    x0[lay.z_rows] = z
    y, zr = lay.y_rows, lay.z_rows
    Qyy = Q[np.ix_(y, y)]
    mu = -np.linalg.solve(Qyy, Q[np.ix_(y, zr)] @ z)
    return gauss_logpdf_prec(x0, Q) - gauss_logpdf_prec(-mu, Qyy)


def standard_product_loglik(plan, model, z):
    """sum_i log N(z_i | z_q(i)) under K + tau2 I, z in x-order."""
    pts = plan.locations.coords
    start = np.r_[0, np.cumsum([b.size for b, o in zip(plan.blocks, plan.observed) if o])]
    pos = {}
    k = 0
    for i, o in enumerate(plan.observed):
        if o:
            pos[i] = np.arange(start[k], start[k + 1])
            k += 1
    total = 0.0
    for i in np.flatnonzero(plan.observed):
        a = plan.blocks[i]
        Caa = model.kernel(pts[a]) + model.tau2 * np.eye(a.size)
        za = z[pos[i]]
        if plan.q[i]:
            g = np.concatenate([plan.blocks[j] for j in plan.q[i]])
            zg = np.concatenate([z[pos[j]] for j in plan.q[i]])
            Cgg = model.kernel(pts[g]) + model.tau2 * np.eye(g.size)
            Cag = model.kernel(pts[a], pts[g])
            Bm = np.linalg.solve(Cgg, Cag.T).T
            mean, cov = Bm @ zg, Caa - Bm @ Cag.T
        else:
            mean, cov = np.zeros(a.size), Caa
        L = np.linalg.cholesky(cov)
        w = sla.solve_triangular(L, za - mean, lower=True)
        total += -0.5 * (2 * np.log(np.diag(L)).sum() + w @ w + a.size * LOG2PI)
    return total


def conditional_mean(model, locations, z):
    """E(y | z) = K inv(K + tau2 I) z."""
    K = model.kernel(np.asarray(locations))
    return K @ np.linalg.solve(K + model.tau2 * np.eye(len(z)), z)


def kl_gauss(C0, C1):
    """KL(N(0, C0) || N(0, C1)) by dense algebra."""
    n = C0.shape[0]
    L1 = np.linalg.cholesky(C1)
    M = sla.solve_triangular(L1, np.linalg.cholesky(C0), lower=True)
    return 0.5 * (np.sum(M * M) - n - 2 * np.log(np.diag(M)).sum())


def rel_fro(A, B):
    return np.linalg.norm(A - B) / np.linalg.norm(B)


def random_plan(rng, n_max=60, partitions=("standard", "latent", "sgv"), blocked=None):
    """A random small plan: singleton or tiled blocks, partial observation,
    NN or first-m conditioning, random partition."""
    from genvecchia.plan import make_blocked_plan, vecchia_plan
    part = partitions[int(rng.integers(len(partitions)))]
    if blocked is None:
        blocked = rng.random() < 0.3
    if blocked:
        side = int(rng.integers(4, 8))
        g = np.stack(np.meshgrid(np.arange(side), np.arange(side), indexing="ij"), -1)
        pts = g.reshape(-1, 2) / side + rng.uniform(0, 0.02, (side * side, 2))
        return make_blocked_plan(pts, int(rng.integers(2, 4)), int(rng.integers(1, 4)),
                                 partition=part), part
    n = int(rng.integers(3, n_max + 1))
    pts = rng.random((n, 2))
    obs = rng.random(n) < 0.8 if part != "standard" else None
    cond = "nn" if rng.random() < 0.7 else "first_m"
    plan = vecchia_plan(pts, int(rng.integers(1, 8)), ordering="maxmin", conditioning=cond,
                        partition=part, observed=obs)
    return plan, part


def random_model(rng):
    from genvecchia.kernels import CovarianceModel
    return CovarianceModel.from_params(float(rng.uniform(0.5, 2.0)),
                                       float(rng.choice([0.5, 1.0, 1.5, 2.5])),
                                       float(rng.uniform(0.05, 0.5)),
                                       float(rng.uniform(0.05, 1.0)))


def descendants(parents):
    n = len(parents)
    ch = [[] for _ in range(n)]
    for v, ps in enumerate(parents):
        for p in ps:
            ch[p].append(v)
    out = []
    for v in range(n):
        seen, stack = set(), [v]
        while stack:
            for c in ch[stack.pop()]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        out.append(seen)
    return out


def path_oracle(parents, A, B, C):
    """d-separation by enumerating simple paths of the skeleton.

    A path is active when every interior vertex is either a non-collider
    outside C, or a collider that is in C or has a descendant in C. Prefixes
    that are already blocked are not extended, since every extension stays
    blocked.
    """
    n = len(parents)
    pset = [set(p) for p in parents]
    nbr = [set() for _ in range(n)]
    for v, ps in enumerate(parents):
        for p in ps:
            nbr[v].add(p)
            nbr[p].add(v)
    desc = descendants(parents)
    A, B, C = set(A), set(B), set(C)

    def open_at(a, k, b):
        if a in pset[k] and b in pset[k]:
            return k in C or bool(desc[k] & C)
        return k not in C

    def search(path, on_path):
        v = path[-1]
        for w in nbr[v]:
            if w in on_path:
                continue
            if len(path) >= 2 and not open_at(path[-2], v, w):
                continue
            if w in B:
                return True
            if w in A:
                continue   # a path through another A vertex is covered from there
            on_path.add(w)
            path.append(w)
            if search(path, on_path):
                return True
            path.pop()
            on_path.discard(w)
        return False

    return not any(search([a], {a}) for a in A)


def implied_covariance(parents, rng):
    """Covariance of x = B x + e with random nonzero edge weights."""
    n = len(parents)
    Bm = np.zeros((n, n))
    for v, ps in enumerate(parents):
        for p in ps:
            Bm[v, p] = rng.choice([-1, 1]) * rng.uniform(0.5, 1.5)
    Ainv = np.linalg.inv(np.eye(n) - Bm)
    return Ainv @ np.diag(rng.uniform(0.5, 2.0, n)) @ Ainv.T


def max_partial_corr(S, A, B, C):
    """Largest |conditional correlation| between members of A and B given C."""
    idx = list(A) + list(B)
    C = list(C)
    S11 = S[np.ix_(idx, idx)]
    if C:
        S11 = S11 - S[np.ix_(idx, C)] @ np.linalg.solve(S[np.ix_(C, C)], S[np.ix_(C, idx)])
    d = np.sqrt(np.diag(S11))
    R = S11 / np.outer(d, d)
    return float(np.abs(R[:len(A), len(A):]).max())
