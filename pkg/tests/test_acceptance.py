"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Tolerances are pinned here.  Run alone with ``pytest tests/test_acceptance.py -v -s``.
"""

import math
import time
from pathlib import Path

import pytest

from perpfund import bsde, experiments as ex
from perpfund.calibrate import delayed_feasibility, ell_threshold, feasible_ell_interval
from perpfund.config import load_config
from perpfund.funding import CustomRate, g_series, make_const_prop_rate
from perpfund.market import BlackScholes, RandomSource, simulate_q
from perpfund.paths import TimeGrid
from perpfund.portfolio import martingale_check
from perpfund.selftest import run_selftest
from perpfund.target import LinearIndex

CONFIGS = Path(__file__).parents[1] / "configs"
MODEL = BlackScholes.diagonal([0.05], [0.3], 0.02)

THRESHOLD, THRESHOLD_TOL = 0.26227, 1e-4
INTERVAL, INTERVAL_TOL = (1.26227, 15.75125), (1e-4, 1e-3)
TRACK_TOL = {"linear": 0.01, "quadratic": 0.02}
RESIDUAL_SLOPE_MIN = 0.4
SLOPE_BAND = (0.3, 0.7)
PICARD_MARGIN = 1.10
PICARD_CASES = [(2.0, 1 / 1095), (5.0, 1 / 512), (3.0, 1 / 128)]
MG_PATHS, MG_Z, BIAS, BIAS_Z = 100_000, 3.0, 0.01, 5.0
CFMM_TOL = 1e-10

pytestmark = pytest.mark.slow


def cfg_from(path=None, **over):
    return load_config(path, over or None, environ={})


def test_criterion_01_threshold(criterion):
    t0 = time.perf_counter()
    v = ell_threshold(0.02, 0.3, 1).value
    dt = time.perf_counter() - t0
    ok = abs(v - THRESHOLD) <= THRESHOLD_TOL and dt < 1.0
    criterion(1, ok, f"threshold={v:.6f} (want {THRESHOLD} +- {THRESHOLD_TOL}), {dt * 1e3:.1f} ms")
    assert ok


def test_criterion_02_feasible_interval(criterion):
    t0 = time.perf_counter()
    lo, hi = feasible_ell_interval(0.02, 1, 1 / 1095, 0.3)
    dt = time.perf_counter() - t0
    ok = abs(lo - INTERVAL[0]) <= INTERVAL_TOL[0] and abs(hi - INTERVAL[1]) <= INTERVAL_TOL[1] and dt < 1.0
    criterion(2, ok, f"interval=({lo:.6f}, {hi:.6f}), {dt * 1e3:.1f} ms")
    assert ok


def test_criterion_03_tracking(criterion):
    t0 = time.perf_counter()
    out, ok = [], True
    for name, target in (("linear", {"kind": "linear", "c": [1.0]}),
                         ("quadratic", {"kind": "power", "c": [1.0], "p": [2.0]})):
        res = ex.run_track(cfg_from(target=target))
        err = res.checks["tracking_max_mean_rel_error"]["value"]
        slope = res.checks["residual_slope"]["value"]
        ok &= err <= TRACK_TOL[name]
        ok &= slope == "exact" or slope >= RESIDUAL_SLOPE_MIN
        out.append(f"{name}: err={err:.4f} residual_slope={slope if isinstance(slope, str) else f'{slope:.3f}'}")
    dt = time.perf_counter() - t0
    ok &= dt <= 300
    criterion(3, ok, "; ".join(out) + f"; {dt:.0f} s")
    assert ok


@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    res = ex.run_delay_sweep(cfg_from(CONFIGS / "sweep.yaml"))
    return res, time.perf_counter() - t0


def test_criterion_04_sqrt_delta_rate(criterion, sweep):
    res, dt = sweep
    slope = res.checks["y_slope_in_band"]["value"]
    in_band = SLOPE_BAND[0] <= slope <= SLOPE_BAND[1]
    env = res.checks["below_computed_envelope"]["passed"]
    pub = res.checks["below_published_envelope"]["passed"]
    ok = in_band and env and pub and dt <= 900
    criterion(4, ok, f"slope={slope:.3f} (band {SLOPE_BAND}), below computed envelope={env}, "
                     f"below published envelope={pub}, {dt:.0f} s")
    assert env and pub, "envelope violated"
    assert in_band, f"Y-error slope {slope:.3f} outside {SLOPE_BAND}"


def test_criterion_05_z_envelope(criterion, sweep):
    res, _ = sweep
    ref = [r for r in res.tables["delta_sweep"] if math.isclose(r["delta"], 1 / 1095)][0]
    ok = ref["E_int_dZ2"] <= ref["published_z_envelope"] and res.checks["z_below_envelopes"]["passed"]
    criterion(5, ok, f"E int|dZ|^2={ref['E_int_dZ2']:.3e} vs published {ref['published_z_envelope']:.3e}, "
                     f"computed {ref['computed_z_envelope']:.3e}")
    assert ok


def test_criterion_06_nonuniqueness(criterion):
    t0 = time.perf_counter()
    res = ex.run_track(cfg_from(CONFIGS / "nonunique.yaml"), allow_nonunique=True)
    dt = time.perf_counter() - t0
    nu = {k: v for k, v in res.checks.items() if k.startswith("nonunique.")}
    ok = len(nu) == 6 and all(v["passed"] for v in nu.values()) and dt <= 180
    failed = [k for k, v in nu.items() if not v["passed"]]
    criterion(6, ok, f"{len(nu)} checks, failed={failed or 'none'}, {dt:.0f} s")
    assert ok


def test_criterion_07_picard_contraction(criterion):
    t0 = time.perf_counter()
    phi = LinearIndex([1.0])
    ens = simulate_q(MODEL, [1.0], TimeGrid(0.0, 2e-3, 2000), RandomSource(77), 2000, scheme="exact")
    out, ok = [], True
    for ell, delta in PICARD_CASES:
        assert delayed_feasibility(ell, MODEL.r, 1, delta, 0.3).feasible
        sol = bsde.solve_delayed(g_series(ell, phi, MODEL, delta, ens), ell, MODEL.r, delta, ens,
                                 bsde.SolverConfig(T_report=1.0))
        ratios, bound = sol.diagnostics["picard_sq_ratios"], sol.diagnostics["contraction_bound"]
        case_ok = len(ratios) >= 1 and max(ratios) <= PICARD_MARGIN * bound
        ok &= case_ok
        out.append(f"(ell={ell:g}, delta=1/{round(1 / delta)}): max ratio {max(ratios):.2e} <= {bound:.3f}")
    dt = time.perf_counter() - t0
    ok &= dt <= 300
    criterion(7, ok, "; ".join(out) + f"; {dt:.0f} s")
    assert ok


def test_criterion_08_martingale(criterion):
    t0 = time.perf_counter()
    phi = LinearIndex([1.0])
    ens = simulate_q(MODEL, [1.0], TimeGrid(0.0, 1e-2, 100), RandomSource(2024), MG_PATHS, scheme="exact")
    rate = make_const_prop_rate(2.0, phi, MODEL)
    Y = bsde.analytic_solution(phi, ens).Y
    clean = martingale_check(Y, rate, ens, n_checkpoints=10, threshold=MG_Z)
    biased = martingale_check(Y, CustomRate(lambda t, h, y: rate(t, h, y) + BIAS), ens, n_checkpoints=10)
    dt = time.perf_counter() - t0
    ok = clean.passed and len(clean.times) == 10 and biased.max_abs_z > BIAS_Z and dt <= 120
    criterion(8, ok, f"clean max|z|={clean.max_abs_z:.2f} (<= {MG_Z}), biased max|z|={biased.max_abs_z:.1f} "
                     f"(> {BIAS_Z}), {dt:.0f} s")
    assert ok


def test_criterion_09_cfmm_reduction(criterion):
    t0 = time.perf_counter()
    cfg = cfg_from(CONFIGS / "cfmm.yaml")
    cfg.model.kind, cfg.target.kind = "cfmm", "cfmm"
    res = ex.cfmm_identity(cfg, ex.build_setup(cfg), n_paths=200)
    dt = time.perf_counter() - t0
    ident, hold = res.checks["reduction_identity"]["value"], res.checks["holding_expansion"]["value"]
    ok = ident < CFMM_TOL and hold < CFMM_TOL and dt < 30
    criterion(9, ok, f"identity err={ident:.1e}, holding err={hold:.1e}, kappa={res.tables['cfmm'][0]['kappa']:.4f}, "
                     f"{dt:.1f} s")
    assert ok


def test_criterion_10_selftest(criterion):
    t0 = time.perf_counter()
    results = run_selftest(0)
    dt = time.perf_counter() - t0
    failed = [n for n, ok, _ in results if not ok]
    groups = {n.split(".")[0] for n, _, _ in results}
    ok = not failed and {"paths", "target", "funding", "market", "calibrate"} <= groups and dt <= 300
    criterion(10, ok, f"{len(results)} properties, failed={failed or 'none'}, {dt:.1f} s")
    assert ok
