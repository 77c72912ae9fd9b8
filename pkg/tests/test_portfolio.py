import numpy as np
import pytest

from perpfund import bsde
from perpfund.errors import ConfigError, SingularDiffusionError, StateError
from perpfund.funding import CustomRate, make_const_prop_rate
from perpfund.market import BlackScholes, RandomSource, money_market, simulate_p, simulate_q
from perpfund.paths import TimeGrid
from perpfund.portfolio import (
    FundingPortfolio,
    admissibility_check,
    compensated_process,
    martingale_check,
    replicate,
    simulate_wealth,
    write_ledger_csv,
)
from perpfund.target import LinearIndex, PowerIndex


def test_replicating_linear_target_holds_one_unit(q_ens1):
    phi = LinearIndex([1.0])
    pf = replicate(phi, q_ens1.model, bsde.analytic_solution(phi, q_ens1))
    assert np.allclose(pf.phi, 1.0, rtol=0, atol=1e-14)
    assert np.allclose(pf.phi0, 0.0, atol=1e-14)


def test_replicating_square_holds_two_x(q_ens1):
    phi = PowerIndex([1.0], [2.0])
    pf = replicate(phi, q_ens1.model, bsde.analytic_solution(phi, q_ens1))
    assert np.allclose(pf.phi[..., 0], 2 * q_ens1.values[..., 0], rtol=1e-13)
    # money-market leg finances the rest: phi0 G = X^2 - 2 X^2
    G = money_market(q_ens1.model, q_ens1)
    assert np.allclose(pf.phi0 * G, -q_ens1.values[..., 0] ** 2, rtol=1e-12)


def test_correlated_two_asset_replication(rng):
    sig = np.array([[0.3, 0.0], [0.1, 0.2]])
    model = BlackScholes([0.05, 0.03], sig, 0.01)
    ens = simulate_q(model, [1.0, 2.0], TimeGrid(0.0, 0.05, 20), RandomSource(1), 50, scheme="exact")
    phi = LinearIndex([1.0, -0.5])
    pf = replicate(phi, model, bsde.analytic_solution(phi, ens))
    assert np.allclose(pf.phi, [1.0, -0.5], atol=1e-12)


def test_singular_diffusion_detected(q_ens1):
    sol = bsde.analytic_solution(LinearIndex([1.0]), q_ens1)

    class Degenerate:
        def sigma(self, t, hist):
            return np.zeros(hist.shape[:-2] + (1, 1))

        constant_rate = 0.02

        def short_rate(self, t, hist):
            return np.full(hist.shape[:-2], 0.02)

    with pytest.raises(SingularDiffusionError):
        replicate(None, Degenerate(), sol)


def test_buy_and_hold_without_fee_is_asset(q_ens1):
    pf = FundingPortfolio.buy_and_hold(q_ens1, q_ens1.model, [1.0])
    traj = simulate_wealth(pf, None, q_ens1)
    assert np.allclose(traj.V, q_ens1.values[..., 0], rtol=1e-13)
    assert np.all(traj.accrued_fees == 0)


def test_self_financing_identity_stepwise(q_ens1):
    phi = PowerIndex([1.0], [2.0])
    rate = make_const_prop_rate(2.0, phi, q_ens1.model)
    pf = replicate(phi, q_ens1.model, bsde.analytic_solution(phi, q_ens1))
    traj = simulate_wealth(pf, rate, q_ens1)
    dV = np.diff(traj.V, axis=1)
    want = (pf.phi0[:, :-1] * np.diff(pf.G, axis=1)
            + np.sum(pf.phi[:, :-1] * np.diff(q_ens1.values, axis=1), axis=-1) - traj.fee[:, :-1] * 0.01)
    assert np.allclose(dV, want, atol=1e-13)
    long_, short_ = traj.fee_flows()
    assert np.all(long_ + short_ == 0)


def test_fee_at_reference_uses_reference(q_ens1):
    phi = LinearIndex([1.0])
    rate = make_const_prop_rate(2.0, phi, q_ens1.model)
    pf = FundingPortfolio.zero(q_ens1, q_ens1.model)
    ref = q_ens1.values[..., 0]
    traj = simulate_wealth(pf, rate, q_ens1, V0=np.ones(q_ens1.n_paths), fee_at="reference", reference=ref)
    # at y = phi the fee is -L phi + r phi = 0 for the linear target
    assert np.allclose(traj.fee, 0.0, atol=1e-15)
    with pytest.raises(ConfigError):
        simulate_wealth(pf, rate, q_ens1, fee_at="reference")
    with pytest.raises(ConfigError):
        simulate_wealth(pf, rate, q_ens1, fee_at="future")


def test_portfolio_algebra(q_ens1):
    a = FundingPortfolio.buy_and_hold(q_ens1, q_ens1.model, [1.0])
    b = a.scaled(2.0) + a
    assert np.allclose(b.value(q_ens1.values), 3 * q_ens1.values[..., 0])
    with pytest.raises(StateError):
        FundingPortfolio(np.array([np.inf]), np.zeros((1, 1)), np.ones(1))


def test_admissibility(q_ens1):
    X = q_ens1.values[..., 0]
    assert admissibility_check(X, q_ens1, 1.0).passed
    rep = admissibility_check(X ** -8.0, q_ens1, 1.0, cap=2.0)
    assert rep.L_hat > 2.0 and not rep.passed


def test_compensated_process_left_point():
    Y = np.array([[1.0, 1.0, 1.0]])
    F = np.array([[1.0, 2.0, 3.0]])
    G = np.ones((1, 3))
    assert np.allclose(compensated_process(Y, F, G, 0.5), [[1.0, 1.5, 2.5]])


@pytest.fixture(scope="module")
def mg_ens():
    model = BlackScholes.diagonal([0.05], [0.3], 0.02)
    return simulate_q(model, [1.0], TimeGrid(0.0, 0.02, 50), RandomSource(17), 40000, scheme="exact")


def test_martingale_check_passes_and_detects_bias(mg_ens):
    phi = LinearIndex([1.0])
    rate = make_const_prop_rate(2.0, phi, mg_ens.model)
    Y = bsde.analytic_solution(phi, mg_ens).Y
    assert martingale_check(Y, rate, mg_ens).passed
    biased = CustomRate(lambda t, h, y: rate(t, h, y) + 0.01)
    rep = martingale_check(Y, biased, mg_ens)
    assert rep.max_abs_z > 5


def test_martingale_check_accepts_fee_array_and_trajectory(mg_ens):
    X = mg_ens.values[..., 0]
    assert martingale_check(X, None, mg_ens).passed
    assert martingale_check(X, np.zeros_like(X), mg_ens).passed
    pf = FundingPortfolio.buy_and_hold(mg_ens, mg_ens.model, [1.0])
    assert martingale_check(simulate_wealth(pf, None, mg_ens), None, mg_ens).passed


def test_martingale_check_needs_q(bs1):
    ens = simulate_p(bs1, [1.0], TimeGrid(0.0, 0.1, 10), RandomSource(0), 20)
    with pytest.raises(StateError):
        martingale_check(ens.values[..., 0], None, ens)


def test_ledger_csv(tmp_path, q_ens1):
    pf = FundingPortfolio.buy_and_hold(q_ens1, q_ens1.model, [1.0])
    traj = simulate_wealth(pf, None, q_ens1)
    f = tmp_path / "ledger.csv"
    write_ledger_csv(f, traj, q_ens1, q_ens1.values[..., 0], max_paths=2)
    lines = f.read_text().splitlines()
    assert lines[0] == "t,path_id,V,fee_accrued,tracking_error"
    assert len(lines) == 1 + 2 * 101
    assert float(lines[5].split(",")[-1]) == pytest.approx(0.0, abs=1e-12)
