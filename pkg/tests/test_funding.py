import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perpfund.errors import ConfigError, KindMismatchError
from perpfund.funding import (
    AnchorFunction,
    CustomRate,
    ExactQV,
    RealizedQV,
    anchor_monotonicity_test,
    driver_growth_constants,
    eval_rate,
    g_functional,
    g_series,
    make_const_prop_rate,
    make_model_free_rate,
    make_spot_rate,
    make_windowed_rate,
    write_fee_csv,
)
from perpfund.paths import GridPath, window_integrals
from perpfund.target import LinearIndex, PowerIndex, ProductPower, generator

ANCHORS = [AnchorFunction.linear(2.0), AnchorFunction.piecewise(1.5, 3.0, 0.5), AnchorFunction.one_sided(2.0, 4.0)]


@pytest.mark.parametrize("H", ANCHORS, ids=lambda h: h.kind)
def test_builtin_anchors_pass_monotonicity(H):
    rep = anchor_monotonicity_test(H, 5000)
    assert rep.passed
    assert rep.min_ratio >= H.ell * (1 - 1e-9)


@settings(max_examples=50, deadline=None)
@given(y1=st.floats(-100, 100), a=st.floats(-50, 50), b=st.floats(-50, 50))
def test_anchor_monotone_in_second_argument(y1, a, b):
    for H in ANCHORS:
        assert H(y1, y1) == 0
        if a != b:
            lhs = (a - b) * (H(y1, y1 + a) - H(y1, y1 + b))
            assert lhs <= -H.ell * (a - b) ** 2 * (1 - 1e-9) + 1e-9


def test_cubic_anchor_rejected():
    cubic = AnchorFunction.custom(lambda a, b: (a - b) ** 3, 1.0)
    assert not anchor_monotonicity_test(cubic, 2000).passed
    with pytest.raises(ConfigError):
        make_spot_rate(cubic, LinearIndex([1.0]), None, n_test=2000)


def test_anchor_validation():
    with pytest.raises(ConfigError):
        AnchorFunction.linear(-1.0)
    with pytest.raises(ConfigError):
        AnchorFunction("quadratic", 1.0)
    assert AnchorFunction.piecewise(2.0, 2.0).is_linear
    assert AnchorFunction.piecewise(1.0, 3.0).lipschitz == 3.0


@pytest.mark.parametrize("H", ANCHORS, ids=lambda h: h.kind)
def test_anchor_term_vanishes_at_target(H, bs2, rng):
    phi = PowerIndex([1.0, 2.0], [2.0, 1.0])
    rate = make_spot_rate(H, phi, bs2, n_test=2000)
    hist = np.abs(rng.normal(1, 0.2, (50, 4, 2)))
    terms = rate.anchor_terms(0.3, hist)
    assert np.all(terms.H_term == 0)
    assert np.allclose(terms.fee, -generator(phi, bs2, 0.3, hist) + 0.02 * phi(0.3, hist))


def test_const_prop_rate_formula(bs1):
    phi = PowerIndex([1.0], [2.0])
    rate = make_const_prop_rate(2.0, phi, bs1)
    hist = np.array([[[1.3]]])
    y = np.array([1.5])
    want = 2.0 * (1.69 - 1.5) - (0.04 + 0.09) * 1.69 + 0.02 * 1.5
    assert rate(0.0, hist, y)[0] == pytest.approx(want, rel=1e-13)
    assert rate.driver(0.0, hist, y)[0] == pytest.approx(want - 0.02 * 1.5, rel=1e-13)


def test_spot_rate_rejects_y_path(bs1):
    rate = make_const_prop_rate(2.0, LinearIndex([1.0]), bs1)
    hist = np.ones((3, 2, 1))
    with pytest.raises(KindMismatchError):
        rate.terms(0.0, hist, np.ones(5))


def test_eval_rate_kinds(bs1):
    grid_path = GridPath.__new__(GridPath)
    from perpfund.paths import TimeGrid

    g = TimeGrid(0.0, 0.01, 10)
    x = GridPath(g, np.linspace(1, 1.1, 11))
    spot = make_const_prop_rate(2.0, LinearIndex([1.0]), bs1)
    w = make_windowed_rate(2.0, LinearIndex([1.0]), bs1, 0.05)
    y = np.linspace(1, 1.1, 11)
    assert np.isfinite(eval_rate(spot, 0.05, x, 1.0).fee)
    with pytest.raises(KindMismatchError):
        eval_rate(spot, 0.05, x, y)
    with pytest.raises(KindMismatchError):
        eval_rate(w, 0.05, x, 1.0)
    with pytest.raises(KindMismatchError):
        w.terms(0.0, x.values[None], 1.0)
    # at the anchor (y = phi) the windowed fee equals the window mean of the spot fee
    fee = eval_rate(w, 0.1, x, y).fee
    assert np.isfinite(fee)
    del grid_path


def test_windowed_series_is_window_mean_of_pointwise(q_ens1):
    phi = LinearIndex([1.0])
    w = make_windowed_rate(2.0, phi, q_ens1.model, 0.05)
    Y = q_ens1.values[..., 0] * 1.01
    pw = w.pointwise_series(q_ens1, Y).fee
    assert np.allclose(w.series(q_ens1, Y).fee, window_integrals(pw, q_ens1.grid, 0.05) / 0.05)
    k = 40
    on_path = w.terms_on_path(q_ens1.grid, q_ens1.values[:5, : k + 1], Y[:5, : k + 1]).fee
    assert np.allclose(on_path, w.series(q_ens1, Y).fee[:5, k])


def test_windowed_rate_validation(bs1):
    with pytest.raises(ConfigError):
        make_windowed_rate(2.0, LinearIndex([1.0]), bs1, 0.0)


def test_g_series_and_g_functional_agree(q_ens1):
    phi = PowerIndex([1.0], [2.0])
    g = g_series(2.0, phi, q_ens1.model, 0.05, q_ens1)
    for k in (0, 3, 50):
        assert g_functional(2.0, phi, q_ens1.model, 0.05, q_ens1.grid.time(k), q_ens1.path(2)) == pytest.approx(g[2, k])


def test_driver_growth_constants_linear_and_power(bs1):
    c = driver_growth_constants(LinearIndex([1.0]), bs1, 2.0)
    assert c["C_phi"] == pytest.approx(1.98) and c["rho"] == 1
    assert c["C5"] == pytest.approx(1.98 / 3)
    q = driver_growth_constants(PowerIndex([1.0], [2.0]), bs1, 2.0)
    assert q["C_phi"] == pytest.approx(2.0 - 0.04 - 0.09)
    assert q["rho"] == 2
    with pytest.raises(ConfigError):
        driver_growth_constants(ProductPower([1.0]), bs1, 2.0)


def test_model_free_rate_matches_model_rate_with_exact_qv(q_ens1):
    model = q_ens1.model
    phi = PowerIndex([1.0], [2.0])

    class _Drift:
        def __call__(self, t, hist, dt):
            return np.full(hist.shape[:-2], model.r)

    mf = make_model_free_rate(AnchorFunction.linear(2.0), phi, ExactQV(model), _Drift(), q_ens1.grid.dt)
    spot = make_const_prop_rate(2.0, phi, model)
    hist = q_ens1.hist(30)
    y = hist[:, -1, 0] ** 2 + 0.1
    assert np.allclose(mf(0.3, hist, y), spot(0.3, hist, y), rtol=1e-10, atol=1e-12)


def test_realized_qv_estimates_variance(q_ens1):
    est = RealizedQV(window=100)(1.0, q_ens1.values, q_ens1.grid.dt)
    # the window sees sigma^2 X^2 along the last 100 steps
    ref = 0.09 * np.mean(q_ens1.values[:, :-1, 0] ** 2, axis=1)
    assert np.mean(est[..., 0, 0]) / np.mean(ref) == pytest.approx(1.0, rel=0.03)
    with pytest.raises(ConfigError):
        RealizedQV(0)


def test_custom_rate_is_unvalidated():
    r = CustomRate(lambda t, h, y: np.zeros_like(y))
    assert not r.validated


def test_fee_csv(tmp_path, bs1):
    rate = make_const_prop_rate(2.0, LinearIndex([1.0]), bs1)
    hist = np.ones((1, 1, 1))
    terms = rate.terms(0.0, hist, np.array([1.0]))
    f = tmp_path / "fee.csv"
    write_fee_csv(f, [0.0], terms)
    assert f.read_text().splitlines()[0] == "t,fee,H_term,generator_term,carry_term"
