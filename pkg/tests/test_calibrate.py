import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perpfund.calibrate import (
    PUBLISHED_Y_ENVELOPE,
    bdg_constant,
    decay_constants,
    delayed_feasibility,
    ell_threshold,
    error_bound_coeffs,
    feasible_ell_interval,
    golden_section,
    increment_constant,
    max_ell_for_delta,
    published_z_envelope,
)
from perpfund.errors import ConfigError, InfeasibleError


def test_bdg_constants():
    assert bdg_constant(2) == 2
    assert bdg_constant(3.5) == 3.5
    assert bdg_constant(1) == pytest.approx(3.0)
    assert 1 < bdg_constant(1.5) < 6
    with pytest.raises(ConfigError):
        bdg_constant(0.5)


def test_golden_section_finds_minimum():
    x, fx = golden_section(lambda u: (u - 1.3) ** 2 + 2, -5, 5, tol=1e-10)
    # a flat minimum pins x only to about sqrt(machine eps)
    assert x == pytest.approx(1.3, abs=1e-7)
    assert fx == pytest.approx(2.0)


def test_threshold_reference_value():
    r = ell_threshold(0.02, 0.3, 1)
    assert r.value == pytest.approx(0.26227, abs=1e-4)
    assert r.M == 2


def test_threshold_without_rate_is_closed_form():
    assert ell_threshold(0.0, 0.3, 1).value == pytest.approx(0.5 * (2 * 0.3) ** 2)


@settings(max_examples=40, deadline=None)
@given(cr=st.floats(0.001, 0.5), c3=st.floats(0.01, 1.0))
def test_threshold_monotone_and_bounded_by_any_K(cr, c3):
    base = ell_threshold(cr, c3, 1).value
    assert ell_threshold(cr, c3 * 1.1, 1).value >= base - 1e-9
    assert ell_threshold(cr * 1.1, c3, 1).value >= base - 1e-9
    # the infimum is below the objective at any fixed K
    for K in (0.01, 0.1, 1.0):
        assert base <= K + 0.5 * (cr / math.sqrt(2 * K) + 2 * c3) ** 2 + 1e-9
    # linear in rho for rho <= 2
    assert ell_threshold(cr, c3, 1.5).value == pytest.approx(1.5 * base, rel=1e-6)


def test_threshold_rejects_negative_inputs():
    with pytest.raises(ConfigError):
        ell_threshold(-0.1, 0.3, 1)


def test_feasible_interval_reference_values():
    lo, hi = feasible_ell_interval(0.02, 1, 1 / 1095, 0.3)
    assert lo == pytest.approx(1.26227, abs=1e-4)
    assert hi == pytest.approx(15.75125, abs=1e-3)


def test_feasibility_report_binding_conditions():
    ok = delayed_feasibility(2.0, 0.02, 1, 1 / 1095, 0.3)
    assert ok.feasible
    low = delayed_feasibility(1.1, 0.02, 1, 1 / 1095, 0.3)
    assert not low.pass_i and low.binding == "i"
    high = delayed_feasibility(20.0, 0.02, 1, 1 / 1095, 0.3)
    assert not high.feasible
    with pytest.raises(ConfigError):
        delayed_feasibility(2.0, 0.02, 1, 1.5, 0.3)


def test_max_ell_shrinks_with_delta():
    assert max_ell_for_delta(0.02, 1, 1 / 256) < max_ell_for_delta(0.02, 1, 1 / 1095)


def test_decay_constants_side_conditions():
    dc = decay_constants(0.0, 0.02, 0.3, 1, 2.0, 0.02, delta=1 / 1095)
    assert dc.L7 == 0.0
    assert dc.L8 < 1.0
    assert dc.L6 == pytest.approx(math.e)
    spot = decay_constants(0.0, 0.02, 0.3, 1, 2.0, 0.02)
    assert spot.L8 < 2.0 and not spot.delayed
    with pytest.raises(InfeasibleError):
        decay_constants(0.0, 0.02, 0.3, 1, 1.1, 0.02, delta=1 / 1095)


def test_error_bound_coefficients_positive_and_scale_with_sqrt_delta():
    dc = decay_constants(0.0, 0.02, 0.3, 1, 2.0, 0.02, delta=1 / 1095)
    eb = error_bound_coeffs(dc, 1.98, 0.66, 1.0)
    assert min(eb.L1, eb.L2, eb.L3, eb.L4, eb.L5) > 0
    assert eb.form == "1"
    b1 = eb.y_bound(1.5, 1 / 1095)
    assert b1 == pytest.approx((eb.L1 + 1.5 * eb.L2) * math.sqrt(1 / 1095))
    with pytest.raises(ConfigError):
        error_bound_coeffs(decay_constants(0.0, 0.02, 0.3, 1, 2.0, 0.02), 1.98, 0.66, 1.0)


def test_increment_constant():
    assert increment_constant(0.0, 0.02, 0.3, 2) == pytest.approx(2 * (0.02 + 0.6) ** 2)


def test_published_envelopes():
    assert PUBLISHED_Y_ENVELOPE["slope"] == 0.11134
    z = published_z_envelope(1.0, 1.2, 1.1)
    assert z > 0
