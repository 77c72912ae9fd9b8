import json

import numpy as np
import pytest

from perpfund import experiments as ex
from perpfund.config import load_config
from perpfund.errors import ConfigError

SMALL = {"mc": {"paths": 1500}, "grid": {"dt": 0.005},
         "solver": {"residual_paths": 1000, "residual_levels": 3},
         "checks": {"martingale_paths": 20000}}


def small(**extra):
    o = json.loads(json.dumps(SMALL))
    for k, v in extra.items():
        o.setdefault(k, {}).update(v)
    return load_config(overrides=o, environ={})


def test_track_linear_small_run_passes(tmp_path):
    res = ex.run_track(small())
    assert res.passed, res.checks
    assert res.checks["residual_slope"]["value"] == "exact"
    summary = ex.write_outputs(res, tmp_path, "csv")
    assert summary["passed"]
    for f in ("results.json", "resolved_config.json", "tracking.csv", "ledger.csv", "solution.csv", "martingale.csv"):
        assert (tmp_path / f).exists(), f
    header = (tmp_path / "ledger.csv").read_text().splitlines()[0]
    assert header == "t,path_id,V,fee_accrued,tracking_error"


def test_track_windowed_small_run():
    res = ex.run_track(small(rate={"kind": "windowed", "delta": 1 / 256}, mc={"paths": 3000}))
    assert res.checks["tracking_max_mean_rel_error"]["passed"]
    assert len(res.tables["picard"]) >= 2


def test_track_refuses_below_threshold():
    with pytest.raises(ConfigError):
        ex.run_track(small(rate={"ell": 0.1}))


def test_build_setup_targets():
    st = ex.build_setup(small(target={"kind": "power", "c": [1.0], "p": [2.0]}))
    assert st.rho == 2.0
    st = ex.build_setup(small(model={"mu": [0.0, 0.0], "sigma": [0.2, 0.3], "x0": [1.0, 1.0]},
                              target={"kind": "product", "p": [0.5, 0.5]}))
    assert st.phi.growth_order == 1.0
    with pytest.raises(ConfigError):
        ex.build_setup(small(target={"kind": "fx"}))
    with pytest.raises(ConfigError):
        ex.build_setup(small(model={"sigma": [0.2, 0.3]}))
    cor = ex.build_setup(small(calibrate={"mode": "cor43"}))
    assert cor.rho == 3.0


def test_calibrate_reference_numbers():
    res = ex.run_calibrate(load_config(environ={}))
    vals = {r["quantity"]: r["value"] for r in res.tables["constants"]}
    assert vals["ell_threshold"] == pytest.approx(0.26227, abs=1e-4)
    assert vals["feasible_ell_lower"] == pytest.approx(1.26227, abs=1e-4)
    assert vals["feasible_ell_upper"] == pytest.approx(15.75125, abs=1e-3)
    assert vals["L1"] > 0 and vals["L2"] > 0


def test_tracking_errors_metric():
    ref = np.array([[1.0, 2.0], [1.0, -2.0]])
    Y = np.array([[1.1, 2.0], [0.9, -1.0]])
    assert np.allclose(ex.tracking_errors(Y, ref), [0.1, 0.25])


def test_application_fx_small():
    cfg = small(model={"r_d": 0.02, "r_f": 0.02})
    res = ex.run_application(cfg, "fx")
    assert res.checks["hedge_matches_exp_minus_rf"]["passed"]
    assert res.checks["rate_differential_term_vanishes"]["passed"]


def test_cfmm_identity():
    from pathlib import Path

    cfg = load_config(Path(__file__).parents[1] / "configs" / "cfmm.yaml", environ={})
    cfg.model.kind, cfg.target.kind = "cfmm", "cfmm"
    res = ex.cfmm_identity(cfg, ex.build_setup(cfg), n_paths=50)
    assert res.passed, res.checks
    assert res.tables["cfmm"][0]["kappa"] == pytest.approx(0.01)


def test_unknown_application():
    with pytest.raises(ConfigError):
        ex.run_application(load_config(environ={}), "options")


def test_json_table_output(tmp_path):
    res = ex.run_calibrate(load_config(environ={}))
    ex.write_outputs(res, tmp_path, "json")
    rows = json.loads((tmp_path / "constants.json").read_text())
    assert any(r["quantity"] == "ell_threshold" for r in rows)
