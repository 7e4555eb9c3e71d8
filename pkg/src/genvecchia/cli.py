"""Command-line driver.

Every subcommand reads a JSON config, writes CSV output plus a JSON sidecar
with the resolved config into ``--out``, and exits with 0 on success, 2 when
some cells or fits failed, and 1 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import VecchiaError
from .estimation import mle_fit
from .experiments import (EXPECTED_ERRORS, build_geometry, build_method_plan, data_index,
                          method_label, model_from_spec, run_estimation_study, run_kl_grid,
                          run_sparsity_scaling)
from .inference import factors_for, integrated_loglik, posterior_summary
from .io import config_digest, read_observations, write_json, write_rows, write_trace
from .simulate import RNG_NAME, GaussianSampler

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class ConfigError(Exception):
    pass


def _load_config(args) -> dict:
    if args.config is None:
        raise ConfigError("--config is required")
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"config is missing {', '.join(missing)}")


def _sidecar(out: Path, name: str, cfg: dict, extra=None):
    meta = {"command": name, "config": cfg, "config_digest": config_digest(cfg),
            "rng": RNG_NAME, "version": __version__}
    if extra:
        meta.update(extra)
    write_json(out / f"{name}.json", meta)


def _data(cfg):
    """Locations and observations: from ``data.path`` or simulated from
    ``geometry`` + ``model`` + ``seed``."""
    if "data" in cfg:
        locs, z = read_observations(cfg["data"]["path"])
        if z is None:
            raise ConfigError("data file has no z column")
        return locs, z
    _require(cfg, "geometry", "model")
    locs = build_geometry(cfg["geometry"], int(cfg["seed"]))
    truth = model_from_spec(cfg.get("truth", cfg["model"]))
    return locs, GaussianSampler(truth, locs).draw(int(cfg["seed"])).z


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg, out, threads):
    _require(cfg, "geometry", "model")
    seed = int(cfg["seed"])
    locs = build_geometry(cfg["geometry"], seed)
    model = model_from_spec(cfg["model"])
    draw = GaussianSampler(model, locs).draw(seed)
    header = [f"x{k + 1}" for k in range(locs.d)] + ["y", "z", "config_digest"]
    dig = config_digest(cfg)
    rows = [list(locs.coords[i]) + [draw.y[i], draw.z[i], dig] for i in range(locs.n)]
    write_rows(out / "simulate.csv", header, rows)
    _sidecar(out, "simulate", cfg)
    return 0


LOGLIK_HEADER = ["method", "m", "loglik", "logdet_D", "logdet_V", "ztz", "quad", "n_obs",
                 "error", "plan_hash", "config_digest"]


def cmd_loglik(cfg, out, threads):
    _require(cfg, "model", "methods")
    locs, z = _data(cfg)
    model = model_from_spec(cfg["model"])
    dig = config_digest(cfg)
    rows, failed = [], 0
    for meth in cfg["methods"]:
        row = {"method": meth.get("label", method_label(meth)), "m": meth.get("m", ""),
               "config_digest": dig, "error": ""}
        try:
            plan = build_method_plan(locs, meth)
            res = integrated_loglik(factors_for(plan, model), z[data_index(plan, locs.n)])
            row.update(res.to_dict())
            row["plan_hash"] = plan.digest()
        except EXPECTED_ERRORS as exc:
            row.update(loglik=float("nan"), error=type(exc).__name__)
            failed += 1
        rows.append(row)
    write_rows(out / "loglik.csv", LOGLIK_HEADER, rows)
    _sidecar(out, "loglik", cfg)
    return failed


def cmd_fit(cfg, out, threads):
    _require(cfg, "model", "methods")
    locs, z = _data(cfg)
    template = model_from_spec(cfg["model"])
    fit_cfg = cfg.get("fit", {})
    free = list(fit_cfg.get("free", ["scale"]))
    bounds = {k: tuple(v) for k, v in fit_cfg.get("bounds", {}).items()} or None
    dig = config_digest(cfg)
    header = ["method", *free, "loglik", "converged", "n_evals", "error", "plan_hash",
              "config_digest"]
    rows, failed = [], 0
    for k, meth in enumerate(cfg["methods"]):
        lab = meth.get("label", method_label(meth))
        schedule = meth.get("m_schedule") or [meth.get("m")]
        plans = {}

        def family(m, meth=meth, plans=plans):
            if m not in plans:
                plans[m] = build_method_plan(locs, {**meth, "m": m})
            return plans[m]

        row = {"method": lab, "config_digest": dig, "error": ""}
        try:
            last = family(schedule[-1])
            fit = mle_fit(family, template, z[data_index(last, locs.n)], free,
                          m_schedule=schedule, bounds=bounds, start=fit_cfg.get("start"))
            row.update(fit.params)
            row.update(loglik=fit.loglik, converged=fit.converged,
                       n_evals=sum(s.n_evals for s in fit.stages), plan_hash=last.digest())
            write_trace(out / f"fit_trace_{k}_{lab}.csv", fit, free)
        except EXPECTED_ERRORS as exc:
            row.update(loglik=float("nan"), error=type(exc).__name__)
            failed += 1
        rows.append(row)
    write_rows(out / "fit.csv", header, rows)
    _sidecar(out, "fit", cfg)
    return failed


def cmd_kl_grid(cfg, out, threads):
    _require(cfg, "geometry", "model", "methods")
    header, rows, failed = run_kl_grid(cfg, threads)
    write_rows(out / "kl_grid.csv", header, rows)
    _sidecar(out, "kl-grid", cfg)
    return failed


def cmd_sparsity(cfg, out, threads, timing=False):
    _require(cfg, "points_per_side", "methods")
    header, rows, failed = run_sparsity_scaling(cfg, threads, timing=timing)
    write_rows(out / "sparsity.csv", header, rows)
    _sidecar(out, "sparsity", cfg)
    return failed


def cmd_estimation_study(cfg, out, threads):
    _require(cfg, "geometry", "model", "methods")
    header, rows, sheader, summary, failed = run_estimation_study(cfg, threads)
    write_rows(out / "estimation_study.csv", header, rows)
    write_rows(out / "estimation_summary.csv", sheader, summary)
    _sidecar(out, "estimation-study", cfg)
    return failed


def cmd_posterior(cfg, out, threads):
    _require(cfg, "model", "method")
    locs, z = _data(cfg)
    model = model_from_spec(cfg["model"])
    plan = build_method_plan(locs, cfg["method"])
    f = factors_for(plan, model)
    post = posterior_summary(f, z[data_index(plan, locs.n)],
                             variances=bool(cfg.get("variances", False)))
    pts = plan.locations.coords[f.layout.point[f.layout.y_rows]]
    header = [f"x{k + 1}" for k in range(locs.d)] + ["mean", "variance", "plan_hash",
                                                     "config_digest"]
    dig, ph = config_digest(cfg), plan.digest()
    var = post.variances if post.variances is not None else [None] * pts.shape[0]
    rows = [list(pts[i]) + [post.mean[i], var[i], ph, dig] for i in range(pts.shape[0])]
    write_rows(out / "posterior.csv", header, rows)
    _sidecar(out, "posterior", cfg)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "loglik": cmd_loglik,
    "fit": cmd_fit,
    "kl-grid": cmd_kl_grid,
    "sparsity": cmd_sparsity,
    "estimation-study": cmd_estimation_study,
    "posterior": cmd_posterior,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="genvecchia",
                                description="General Vecchia approximations of Gaussian "
                                            "processes: likelihoods, KL comparisons, "
                                            "sparsity and estimation experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads")
        if name == "sparsity":
            sp.add_argument("--timing", action="store_true",
                            help="fill the wall_time column (output no longer reproducible)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command]
        if args.command == "sparsity":
            failed = fn(cfg, out, args.threads, timing=args.timing)
        else:
            failed = fn(cfg, out, args.threads)
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (VecchiaError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if failed:
        print(f"{failed} cell(s) failed; see the error column", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
