import math
import warnings

import numpy as np
import pytest

from perpfund.errors import ConfigError, SimulationBlowupError, SingularDiffusionError, StateError
from perpfund.market import (
    BlackScholes,
    RandomSource,
    brownian_increments,
    cfmm_reduced_model,
    coarsen_increments,
    fx_model,
    girsanov_density,
    money_market,
    simulate,
    simulate_p,
    simulate_q,
    theta,
)
from perpfund.paths import TimeGrid


def test_random_source_is_reproducible_and_thread_independent():
    rs = RandomSource(42)
    a = rs.normals(np.arange(10), (5, 2), threads=1)
    b = RandomSource(42).normals(np.arange(10), (5, 2), threads=4)
    assert np.array_equal(a, b)
    # stream i does not depend on how many other streams are drawn
    c = rs.normals([3], (5, 2))
    assert np.array_equal(c[0], a[3])
    assert not np.array_equal(a[0], a[1])


def test_seed_range():
    with pytest.raises(ConfigError):
        RandomSource(-1)
    with pytest.raises(ConfigError):
        RandomSource(2**64)
    RandomSource(2**64 - 1)


def test_increments_variance_and_coarsening():
    g = TimeGrid(0.0, 0.01, 100)
    dW = brownian_increments(g, 4000, 2, RandomSource(1))
    assert dW.shape == (4000, 100, 2)
    assert np.var(dW) == pytest.approx(0.01, rel=0.02)
    c = coarsen_increments(dW, 4)
    assert c.shape == (4000, 25, 2)
    assert np.allclose(c[:, 0], dW[:, :4].sum(axis=1))
    with pytest.raises(ConfigError):
        coarsen_increments(dW, 3)


def test_exact_scheme_is_discounted_martingale(bs1):
    g = TimeGrid(0.0, 0.05, 20)
    ens = simulate_q(bs1, [1.0], g, RandomSource(3), 40000, scheme="exact")
    disc = ens.values[:, -1, 0] * math.exp(-bs1.r)
    se = disc.std() / math.sqrt(disc.size)
    assert abs(disc.mean() - 1.0) < 4 * se


def test_euler_converges_to_exact_under_shared_noise(bs1):
    errs = []
    for n in (50, 200):
        g = TimeGrid(0.0, 1.0 / n, n)
        dW = brownian_increments(g, 500, 1, RandomSource(11))
        e = simulate(bs1, [1.0], g, increments=dW, scheme="euler", measure="P")
        x = simulate(bs1, [1.0], g, increments=dW, scheme="exact", measure="P")
        errs.append(np.sqrt(np.mean((e.values[:, -1] - x.values[:, -1]) ** 2)))
    # strong order 1/2 with multiplicative noise: 4x steps, ~2x smaller error
    assert 1.6 < errs[0] / errs[1] < 2.5


def test_simulate_validates_inputs(bs1):
    g = TimeGrid(0.0, 0.1, 10)
    with pytest.raises(ConfigError):
        simulate(bs1, [1.0], g, measure="R", n_paths=2, rng=RandomSource(0))
    with pytest.raises(ConfigError):
        simulate(bs1, [1.0], g)
    with pytest.raises(ConfigError):
        simulate(bs1, [1.0], g, increments=np.zeros((3, 9, 1)))
    with pytest.raises(ConfigError):
        simulate(bs1, [1.0], g, increments=np.zeros((3, 10, 1)), scheme="milstein")


def test_blowup_is_reported_with_location():
    wild = BlackScholes.diagonal([0.0], [5.0], 0.0)
    g = TimeGrid(0.0, 0.1, 50)
    with pytest.raises(SimulationBlowupError) as info:
        simulate_q(wild, [1.0], g, RandomSource(0), 200, scheme="euler", cap=10.0)
    assert info.value.step >= 1


def test_singular_sigma_rejected():
    with pytest.raises(SingularDiffusionError):
        BlackScholes([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]], 0.0)
    with pytest.raises(ConfigError):
        BlackScholes([0.0, 0.0], [[1.0]], 0.0)


def test_bound_constants(bs2):
    b = bs2.bounds
    assert (b.C1, b.C2, b.C3, b.C_r) == (0.0, 0.05, 0.3, 0.02)


def test_money_market_is_exponential(q_ens1):
    G = money_market(q_ens1.model, q_ens1)
    assert np.allclose(G, np.exp(0.02 * q_ens1.times)[None, :], rtol=1e-14)


def test_girsanov_reweighting_recovers_q_expectation(bs1):
    g = TimeGrid(0.0, 0.02, 50)
    ens = simulate_p(bs1, [1.0], g, RandomSource(5), 40000, scheme="exact")
    D = girsanov_density(bs1, ens, 1.0)
    assert D.mean() == pytest.approx(1.0, abs=0.02)
    assert np.mean(D * ens.values[:, -1, 0]) == pytest.approx(math.exp(bs1.r), abs=0.02)
    with pytest.raises(StateError):
        girsanov_density(bs1, simulate_q(bs1, [1.0], g, RandomSource(5), 10))


def test_theta_solves_linear_system(bs2):
    hist = np.ones((3, 1, 2))
    th = theta(bs2, 0.0, hist)
    assert np.allclose(th, (bs2.mu_vec - bs2.r) / np.diag(bs2.sigma_mat))


def test_theta_warns_when_large():
    m = BlackScholes.diagonal([5.0], [0.01], 0.0)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        theta(m, 0.0, np.ones((1, 1, 1)))
    assert any(issubclass(x.category, RuntimeWarning) for x in w)


def test_fx_model_parameters():
    m = fx_model(0.03, 0.01, 0.02, 0.1)
    assert m.mu_vec[0] == pytest.approx(0.03)
    assert m.sigma_mat[0, 0] == 0.1 and m.r == 0.03


def test_cfmm_reduction_constants():
    sig = np.array([[0.2, 0.0], [0.0, 0.2]])
    model, kappa, d = cfmm_reduced_model(0.01, sig, [0.5, 0.5])
    assert kappa == pytest.approx(0.01)
    assert model.sigma_mat[0, 0] == pytest.approx(math.sqrt(0.02))
    assert np.linalg.norm(d) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        cfmm_reduced_model(0.01, sig, [0.7, 0.7])


def test_ensemble_accessors(q_ens1, tmp_path):
    assert len(q_ens1) == 2000 and q_ens1.m == 1
    assert q_ens1.hist(5).shape == (2000, 6, 1)
    assert q_ens1.path(0).values.shape == (101, 1)
    files = q_ens1.to_csv(tmp_path, max_paths=3)
    assert len(files) == 3
