"""Experiment drivers behind the command-line interface.

Each runner takes a plain ``dict`` config, returns a header and rows, and
never lets one failing cell abort the sweep: failures become rows with NaN
values and an error code.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .composite import fcl_loglik, pbl_loglik, rook_pairs, tile_blocks
from .errors import VecchiaError
from .estimation import mle_fit
from .geom import LocationSet, grid_locations, unit_grid
from .inference import assemble_U, dense_loglik, kl_joint_x, kl_observed_z
from .io import config_digest, read_observations
from .kernels import CovarianceModel
from .plan import (exact_plan, make_ar, make_blocked_plan, make_fsa, make_independent_blocks,
                   make_mpp, make_mra, vecchia_plan)
from .simulate import GaussianSampler, make_rng
from .sparsela import rchol_symbolic

EXPECTED_ERRORS = (VecchiaError, np.linalg.LinAlgError, ArithmeticError, ValueError)


# ---------------------------------------------------------------------------
# config pieces

def build_geometry(spec: dict, seed: int = 0, replicate: int = 0) -> LocationSet:
    """Locations from a geometry spec.

    ``{"kind": "grid", "d", "points_per_side", "spacing" | "domain": "unit",
    "jitter"}``: a lattice, optionally perturbed uniformly by up to
    ``jitter/2`` spacings per axis (seeded per replicate).
    ``{"kind": "random", "n", "d"}``: uniform points in the unit cube.
    ``{"kind": "csv", "path"}``: columns ``x1..xd``.
    """
    kind = spec.get("kind", "grid")
    if kind == "grid":
        d, k = int(spec.get("d", 2)), int(spec["points_per_side"])
        if spec.get("domain", "unit") == "unit" and "spacing" not in spec:
            locs = unit_grid(d, k)
            h = 1.0 / max(k - 1, 1)
        else:
            h = float(spec.get("spacing", 1.0))
            locs = grid_locations(d, k, h)
        jit = float(spec.get("jitter", 0.0))
        if jit > 0:
            rng = make_rng(seed, 1, replicate)
            locs = LocationSet(locs.coords + jit * h * (rng.random(locs.coords.shape) - 0.5))
        return locs
    if kind == "random":
        rng = make_rng(seed, 2, replicate)
        return LocationSet(rng.random((int(spec["n"]), int(spec.get("d", 2)))))
    if kind == "csv":
        return read_observations(spec["path"])[0]
    raise ValueError(f"unknown geometry kind {kind!r}")


def model_from_spec(spec: dict, nu=None, snr=None) -> CovarianceModel:
    """CovarianceModel from ``{sigma2, nu, range, tau2}``.

    With `snr` given, the total variance is 1: ``sigma2 = snr / (1 + snr)``
    (``snr = inf`` means no noise). `nu` overrides the smoothness; an
    effective range is converted at the final smoothness.
    """
    cfg = dict(spec)
    if nu is not None:
        cfg["nu"] = nu
    if snr is not None:
        snr = float(snr)
        cfg["sigma2"] = 1.0 if math.isinf(snr) else snr / (1.0 + snr)
        cfg["tau2"] = 0.0 if math.isinf(snr) else 1.0 / (1.0 + snr)
    cfg.setdefault("sigma2", 1.0)
    return CovarianceModel.from_config(cfg)


def _knot_grid(locs: LocationSet, k: int) -> np.ndarray:
    """k^d knots at the tile centres of the bounding box (off the data lattice)."""
    lo, hi = locs.coords.min(axis=0), locs.coords.max(axis=0)
    axes = [lo[a] + (np.arange(k) + 0.5) * (hi[a] - lo[a]) / k + 1e-7 * (hi[a] - lo[a])
            for a in range(locs.d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def build_method_plan(locs: LocationSet, meth: dict):
    """Plan for one method spec (``type`` defaults to ``vecchia``)."""
    kind = meth.get("type", "vecchia")
    part = meth.get("partition", "sgv")
    order = meth.get("ordering", "maxmin")
    if kind == "vecchia":
        return vecchia_plan(locs, int(meth["m"]), ordering=order,
                            conditioning=meth.get("conditioning", "nn"), partition=part)
    if kind == "exact":
        return exact_plan(locs, ordering=meth.get("ordering", "coord"), partition=part)
    if kind == "ar":
        return make_ar(locs, int(meth["m"]))
    if kind == "blocked":
        return make_blocked_plan(locs, int(meth["blocks_per_side"]), int(meth["m"]),
                                 partition=part, ordering=meth.get("ordering", "coord"))
    if kind == "independent":
        return make_independent_blocks(locs, int(meth["blocks_per_side"]))
    if kind == "mpp":
        return make_mpp(locs, _knot_grid(locs, int(meth["knots_per_side"])))
    if kind == "fsa":
        return make_fsa(locs, _knot_grid(locs, int(meth["knots_per_side"])),
                        int(meth["blocks_per_side"]))
    if kind == "mra":
        return make_mra(locs, int(meth["J"]), int(meth["levels"]), int(meth["r_per_region"]))
    raise ValueError(f"unknown method type {kind!r}")


def method_label(meth: dict) -> str:
    kind = meth.get("type", "vecchia")
    if kind == "vecchia":
        return meth.get("partition", "sgv")
    return meth.get("label", kind)


def data_index(plan, n_data: int) -> np.ndarray:
    """Data-point index of each observation in x-order (knots come first)."""
    return plan.observed_points() - (plan.locations.n - n_data)


def _map(fn, items, threads: int):
    """Ordered map, optionally over a thread pool."""
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _err_code(exc) -> str:
    return type(exc).__name__


# ---------------------------------------------------------------------------
# KL grid

KL_HEADER = ["replicate", "method", "ordering", "conditioning", "m", "nu", "snr",
             "KL_x", "KL_z", "error", "plan_hash", "config_digest"]


def run_kl_grid(cfg: dict, threads: int = 1):
    """KL divergences over (replicate geometry) x nu x SNR x method.

    Returns the header, the rows, and the number of failed cells.
    """
    digest = config_digest(cfg)
    grid = cfg.get("grid", {})
    nus = grid.get("nu", [cfg["model"].get("nu", 0.5)])
    snrs = [float(s) for s in grid.get("snr", [1.0])]
    methods = cfg["methods"]
    if not methods:
        raise ValueError("method list is empty")
    seed = int(cfg.get("seed", 0))
    cells = []
    for rep in range(int(cfg.get("replicates", 1))):
        for nu in nus:
            for snr in snrs:
                for meth in methods:
                    cells.append((rep, nu, snr, meth))
    geoms = [build_geometry(cfg["geometry"], seed, rep)
             for rep in range(int(cfg.get("replicates", 1)))]

    def run(cell):
        rep, nu, snr, meth = cell
        locs = geoms[rep]
        row = {"replicate": rep, "method": method_label(meth),
               "ordering": meth.get("ordering", "maxmin"),
               "conditioning": meth.get("conditioning", "nn"), "m": meth.get("m", ""),
               "nu": nu, "snr": snr, "config_digest": digest, "error": ""}
        try:
            plan = build_method_plan(locs, meth)
            model = model_from_spec(cfg["model"], nu=nu, snr=snr)
            row["plan_hash"] = plan.digest()
            row["KL_x"] = kl_joint_x(plan, model)
            row["KL_z"] = kl_observed_z(plan, model)
        except EXPECTED_ERRORS as exc:
            row.update(KL_x=float("nan"), KL_z=float("nan"), error=_err_code(exc))
        return row

    rows = _map(run, cells, threads)
    failed = sum(1 for r in rows if r["error"])
    return KL_HEADER, rows, failed


# ---------------------------------------------------------------------------
# sparsity scaling

SPARSITY_HEADER = ["n", "d", "method", "ordering", "m", "max_nnz_per_col", "sum_sq_nnz",
                   "wall_time", "error", "plan_hash", "config_digest"]


def sparsity_counts(plan, model=None) -> np.ndarray:
    """Structural off-diagonal nonzeros per column of V = rchol(U_Y U_Y')."""
    if model is None:
        model = CovarianceModel.from_params(0.5, 0.5, 0.1, 0.5)
    f = assemble_U(plan, model)
    return rchol_symbolic(f.W).offdiag_counts_upper()


def run_sparsity_scaling(cfg: dict, threads: int = 1, timing: bool = False):
    """Per-column nonzero statistics of V over grid sizes and methods.

    ``wall_time`` is left empty unless `timing` is set, so that output is
    reproducible byte for byte.
    """
    digest = config_digest(cfg)
    d = int(cfg.get("d", 2))
    sizes = [int(k) for k in cfg["points_per_side"]]
    methods = cfg["methods"]
    if not methods:
        raise ValueError("method list is empty")
    model = model_from_spec(cfg["model"]) if "model" in cfg else None
    cells = [(k, meth) for k in sizes for meth in methods]

    def run(cell):
        k, meth = cell
        row = {"n": k ** d, "d": d, "method": method_label(meth),
               "ordering": meth.get("ordering", "maxmin"), "m": meth.get("m", ""),
               "config_digest": digest, "error": "", "wall_time": None}
        try:
            t0 = time.perf_counter()
            plan = build_method_plan(unit_grid(d, k), meth)
            c = sparsity_counts(plan, model)
            if timing:
                row["wall_time"] = time.perf_counter() - t0
            row.update(plan_hash=plan.digest(), max_nnz_per_col=int(c.max(initial=0)),
                       sum_sq_nnz=int(np.sum(c.astype(np.int64) ** 2)))
        except EXPECTED_ERRORS as exc:
            row.update(max_nnz_per_col=float("nan"), sum_sq_nnz=float("nan"),
                       error=_err_code(exc))
        return row

    rows = _map(run, cells, threads)
    return SPARSITY_HEADER, rows, sum(1 for r in rows if r["error"])


# ---------------------------------------------------------------------------
# estimation study

STUDY_HEADER = ["replicate", "method", "estimate", "sq_error", "loglik", "converged",
                "n_evals", "error", "plan_hash", "config_digest"]
SUMMARY_HEADER = ["method", "n_ok", "n_failed", "mse", "ci_low", "ci_high", "config_digest"]
Z95 = 1.959963984540054


def _likelihood_family(locs, meth):
    """plan_family for mle_fit plus the plan hash (if any) and the data order."""
    kind = meth.get("type", "vecchia")
    n = locs.n
    if kind == "exact":
        # dense Cholesky; same value as the full-conditioning plan, far cheaper
        return (lambda m: (lambda model, z: dense_loglik(model, locs, z))), "", np.arange(n)
    if kind == "fcl":
        return (lambda m: (lambda model, z: fcl_loglik(model, z, locs))), "", np.arange(n)
    if kind == "pbl":
        blocks, tiles = tile_blocks(locs, int(meth["tiles_per_side"]))
        pairs = rook_pairs(tiles)
        return ((lambda m: (lambda model, z: pbl_loglik(model, z, locs, blocks, pairs))),
                "", np.arange(n))
    plans = {}
    schedule = meth.get("m_schedule") or [meth.get("m")]

    def family(m):
        if m not in plans:
            plans[m] = build_method_plan(locs, {**meth, "m": m} if m is not None else meth)
        return plans[m]

    last = family(schedule[-1])
    return family, last.digest(), data_index(last, n)


def normal_ci(values) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% interval."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan"), float("nan")
    mean = float(v.mean())
    half = Z95 * float(v.std(ddof=1)) / math.sqrt(v.size) if v.size > 1 else float("nan")
    return mean, mean - half, mean + half


def run_estimation_study(cfg: dict, threads: int = 1):
    """Simulate replicates, fit every method, record squared errors.

    Config keys: ``geometry``, ``model`` (true parameters), ``replicates``,
    ``seed``, ``methods`` and ``fit`` = ``{"free": [...], "bounds": {...},
    "start": {...}}``. Returns the per-replicate header and rows, the
    summary header and rows, and the number of failed fits.
    """
    digest = config_digest(cfg)
    seed = int(cfg.get("seed", 0))
    locs = build_geometry(cfg["geometry"], seed)
    truth = model_from_spec(cfg["model"])
    fit_cfg = cfg.get("fit", {})
    free = list(fit_cfg.get("free", ["scale"]))
    bounds = {k: tuple(v) for k, v in fit_cfg.get("bounds", {}).items()} or None
    start = fit_cfg.get("start")
    methods = cfg["methods"]
    if not methods:
        raise ValueError("method list is empty")
    families = [_likelihood_family(locs, meth) for meth in methods]
    sampler = GaussianSampler(truth, locs)
    n_rep = int(cfg.get("replicates", 1))
    target = free[0]
    true_val = getattr(truth, target)

    def run(rep):
        draw = sampler.draw(seed, 3, rep)
        out = []
        for meth, (family, phash, didx) in zip(methods, families):
            row = {"replicate": rep, "method": meth.get("label", method_label(meth)),
                   "plan_hash": phash, "config_digest": digest, "error": ""}
            schedule = meth.get("m_schedule") or [meth.get("m")]
            try:
                fit = mle_fit(family, truth, draw.z[didx], free, m_schedule=schedule,
                              bounds=bounds, start=start)
                est = fit.params[target]
                row.update(estimate=est, sq_error=(est - true_val) ** 2, loglik=fit.loglik,
                           converged=fit.converged,
                           n_evals=sum(s.n_evals for s in fit.stages))
            except EXPECTED_ERRORS as exc:
                row.update(estimate=float("nan"), sq_error=float("nan"), loglik=float("nan"),
                           converged=False, n_evals=0, error=_err_code(exc))
            out.append(row)
        return out

    rows = [r for rep_rows in _map(run, range(n_rep), threads) for r in rep_rows]
    summary = []
    for meth in methods:
        lab = meth.get("label", method_label(meth))
        se = [r["sq_error"] for r in rows if r["method"] == lab and not r["error"]]
        nfail = sum(1 for r in rows if r["method"] == lab and r["error"])
        mse, lo, hi = normal_ci(se)
        summary.append({"method": lab, "n_ok": len(se), "n_failed": nfail, "mse": mse,
                        "ci_low": lo, "ci_high": hi, "config_digest": digest})
    failed = sum(1 for r in rows if r["error"])
    return STUDY_HEADER, rows, SUMMARY_HEADER, summary, failed


def paired_difference_ci(rows, method_a: str, method_b: str, weight_b: float = 1.0):
    """Normal-approximation 95% CI for mean(e_a^2 - weight_b * e_b^2) over
    replicates where both fits succeeded."""
    by = {}
    for r in rows:
        if not r["error"]:
            by.setdefault(r["replicate"], {})[r["method"]] = r["sq_error"]
    diffs = [v[method_a] - weight_b * v[method_b] for v in by.values()
             if method_a in v and method_b in v]
    return normal_ci(diffs)

