"""CSV and JSON readers/writers.

Locations and observations are CSV files with columns ``x1..xd`` (plus
``z``); plans and results are JSON. Every index written to disk is 1-based.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .geom import LocationSet

FLOAT_FMT = "{:.17g}"


def fmt(v) -> str:
    """Stable text form: round-trippable floats, 'nan' for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else FLOAT_FMT.format(float(v))
    return str(v)


def write_rows(path, header, rows) -> None:
    """CSV with a fixed column order; values pass through :func:`fmt`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            if isinstance(r, dict):
                r = [r.get(h) for h in header]
            w.writerow([fmt(v) for v in r])


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_locations(path, locations: LocationSet, z=None) -> None:
    d = locations.d
    header = [f"x{k + 1}" for k in range(d)] + ([] if z is None else ["z"])
    rows = []
    for i in range(locations.n):
        row = list(locations.coords[i])
        if z is not None:
            row.append(z[i])
        rows.append(row)
    write_rows(path, header, rows)


def read_observations(path):
    """Locations (columns ``x1..xd``) and, when present, the ``z`` column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row])
    xcols = [k for k, h in enumerate(header) if h.startswith("x")]
    if not xcols:
        raise ValueError(f"{path}: no location columns x1..xd")
    locs = LocationSet(data[:, xcols])
    z = data[:, header.index("z")] if "z" in header else None
    return locs, z


def reorder_observations(plan, z):
    """Put location-ordered observations into the plan's x-order.

    Returns the reordered vector and the permutation used (location index
    of each entry).
    """
    perm = plan.observed_points()
    return np.asarray(z, dtype=float)[perm], perm


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_plan(path, plan) -> None:
    write_json(path, plan.to_dict())


def read_plan(path, locations):
    from .plan import VecchiaPlan
    return VecchiaPlan.from_dict(read_json(path), locations)


TRACE_HEADER_BASE = ["stage", "m", "eval_count"]


def write_trace(path, fit, free_params) -> None:
    header = TRACE_HEADER_BASE + list(free_params) + ["loglik"]
    write_rows(path, header, fit.trace)
