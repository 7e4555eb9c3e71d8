import json

import numpy as np
import pytest

from genvecchia.cli import main
from genvecchia.io import read_rows

GEOM = {"kind": "grid", "d": 2, "points_per_side": 8}
MODEL = {"sigma2": 1.0, "nu": 0.5, "range": {"kind": "effective", "value": 0.9}, "tau2": 0.5}

CONFIGS = {
    "simulate": {"geometry": GEOM, "model": MODEL},
    "loglik": {"geometry": GEOM, "model": MODEL,
               "methods": [{"type": "exact"}, {"partition": "sgv", "m": 5}]},
    "fit": {"geometry": GEOM, "model": MODEL,
            "fit": {"free": ["scale"], "bounds": {"scale": [0.01, 5.0]}},
            "methods": [{"partition": "sgv", "m_schedule": [3, 6], "label": "sgv"}]},
    "kl-grid": {"geometry": GEOM, "model": {"nu": 0.5, "range": {"kind": "effective",
                                                                  "value": 0.9}},
                "grid": {"nu": [0.5], "snr": [1, "inf"]},
                "methods": [{"partition": p, "m": 3} for p in ("standard", "latent", "sgv")]},
    "sparsity": {"points_per_side": [6, 8], "methods": [{"partition": "sgv", "m": 4},
                                                        {"partition": "latent", "m": 4}]},
    "estimation-study": {"geometry": GEOM, "model": MODEL, "replicates": 2,
                         "fit": {"free": ["scale"], "bounds": {"scale": [0.01, 5.0]}},
                         "methods": [{"type": "exact", "label": "exact"},
                                     {"partition": "sgv", "m": 5, "label": "sgv"}]},
    "posterior": {"geometry": GEOM, "model": MODEL, "method": {"partition": "sgv", "m": 5},
                  "variances": True},
}


def _run(tmp_path, cmd, cfg, tag, *extra):
    cfile = tmp_path / f"{cmd}.json"
    cfile.write_text(json.dumps(cfg))
    out = tmp_path / tag
    code = main([cmd, "--config", str(cfile), "--seed", "4", "--out", str(out), *extra])
    return code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.parametrize("cmd", sorted(CONFIGS))
def test_commands_are_deterministic(tmp_path, cmd):
    code1, files1 = _run(tmp_path, cmd, CONFIGS[cmd], "a")
    code2, files2 = _run(tmp_path, cmd, CONFIGS[cmd], "b", "--threads", "2")
    assert code1 == code2 == 0
    assert files1 == files2
    assert any(name.endswith(".csv") for name in files1)
    side = json.loads(files1[f"{cmd}.json"])
    assert side["config"]["seed"] == 4 and len(side["config_digest"]) == 16


def test_rows_carry_provenance(tmp_path):
    _run(tmp_path, "loglik", CONFIGS["loglik"], "o")
    rows = read_rows(tmp_path / "o" / "loglik.csv")
    assert all(r["plan_hash"] and r["config_digest"] for r in rows)
    assert float(rows[0]["loglik"]) < 0


def test_sparsity_sgv_bound(tmp_path):
    _run(tmp_path, "sparsity", CONFIGS["sparsity"], "o")
    rows = read_rows(tmp_path / "o" / "sparsity.csv")
    for r in rows:
        if "sgv" in r["method"]:
            assert int(r["max_nnz_per_col"]) <= 4
        assert r["wall_time"] == ""


def test_kl_grid_noiseless_cell_equal(tmp_path):
    _run(tmp_path, "kl-grid", CONFIGS["kl-grid"], "o")
    rows = read_rows(tmp_path / "o" / "kl_grid.csv")
    inf = [float(r["KL_x"]) for r in rows if r["snr"] == "inf"]
    assert len(inf) == 3 and np.ptp(inf) < 1e-12 * max(inf)


def test_exit_codes(tmp_path):
    assert main(["loglik", "--out", str(tmp_path / "x")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["loglik", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    cfg = dict(CONFIGS["loglik"])
    del cfg["methods"]
    assert _run(tmp_path, "loglik", cfg, "m")[0] == 1
    cfg = dict(CONFIGS["loglik"], methods=[{"partition": "bogus", "m": 3},
                                           {"partition": "sgv", "m": 3}])
    code, files = _run(tmp_path, "loglik", cfg, "p")
    assert code == 2
    rows = read_rows(tmp_path / "p" / "loglik.csv")
    assert rows[0]["error"] and rows[0]["loglik"] == "nan" and not rows[1]["error"]


def test_data_file_input(tmp_path):
    from genvecchia.geom import unit_grid
    from genvecchia.io import write_locations
    s = unit_grid(2, 5)
    write_locations(tmp_path / "obs.csv", s, np.random.default_rng(0).standard_normal(25))
    cfg = {"data": {"path": str(tmp_path / "obs.csv")}, "model": MODEL,
           "methods": [{"type": "exact"}]}
    code, _ = _run(tmp_path, "loglik", cfg, "d")
    assert code == 0
