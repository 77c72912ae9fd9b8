"""Fast property suite behind ``perpfund selftest``.

Each check returns (name, passed, detail).  The whole suite runs in well under
a minute on a laptop.
"""

from __future__ import annotations

import math

import numpy as np

from .calibrate import decay_constants, ell_threshold, feasible_ell_interval, increment_constant
from .funding import AnchorFunction, anchor_monotonicity_test, make_spot_rate
from .market import BlackScholes, RandomSource, simulate_q
from .paths import GridPath, TimeGrid, pseudometric, running_sup_norm, stop
from .target import PowerIndex, ProductPower, fd_horizontal, fd_vertical

__all__ = ["run_selftest"]


def _paths_checks(rng):
    grid = TimeGrid(0.0, 0.01, 100)
    paths = [GridPath(grid, np.cumsum(rng.normal(0, 0.1, (101, 2)), axis=0)) for _ in range(6)]
    out = []
    idem = all(np.array_equal(stop(stop(g, s), s).values, stop(g, s).values)
               for g in paths for s in rng.uniform(0, 1, 5))
    out.append(("paths.stop_idempotent", idem, ""))
    comp = True
    for g in paths:
        s, t = np.sort(rng.uniform(0, 1, 2))
        comp &= np.array_equal(stop(stop(g, t), s).values, stop(g, s).values)
    out.append(("paths.stop_composition", bool(comp), ""))
    mono = all(np.all(np.diff(running_sup_norm(g.values)) >= 0) for g in paths)
    out.append(("paths.running_norm_monotone", mono, ""))
    ok = True
    for _ in range(30):
        i, j, k = rng.integers(0, len(paths), 3)
        s1, s2, s3 = rng.uniform(0, 1, 3)
        d12 = pseudometric(s1, paths[i], s2, paths[j])
        d21 = pseudometric(s2, paths[j], s1, paths[i])
        d13 = pseudometric(s1, paths[i], s3, paths[k])
        d32 = pseudometric(s3, paths[k], s2, paths[j])
        ok &= math.isclose(d12, d21) and d12 <= d13 + d32 + 1e-12 and pseudometric(s1, paths[i], s1, paths[i]) == 0
    out.append(("paths.metric_axioms", bool(ok), ""))
    return out


def _fd_order(err_h, err_h2):
    if err_h < 1e-13 and err_h2 < 1e-13:
        return math.inf
    return math.log2(err_h / err_h2)


def _target_checks(rng):
    out = []
    x = rng.uniform(0.7, 1.4, (50, 2))
    hist = np.stack([x * 0.9, x], axis=-2)
    for phi in (PowerIndex([1.0, -0.5], [3.0, 2.5]), ProductPower([1.5, 2.0])):
        g, H = phi.d_x(0.3, hist), phi.d_xx(0.3, hist)
        errs = []
        for h in (1e-2, 5e-3):
            fg, fH = fd_vertical(phi, 0.3, hist, h)
            errs.append((np.max(np.abs(fg - g)), np.max(np.abs(fH - H))))
        og = _fd_order(errs[0][0], errs[1][0])
        oh = _fd_order(errs[0][1], errs[1][1])
        name = type(phi).__name__
        out.append((f"target.{name}.gradient_fd_order", og >= 1.9, f"order={og:.3f}"))
        out.append((f"target.{name}.hessian_fd_order", oh >= 1.9, f"order={oh:.3f}"))
        hs = np.max(np.abs(fd_horizontal(phi, 0.3, hist, 1e-6) - phi.d_s(0.3, hist)))
        out.append((f"target.{name}.horizontal", bool(hs < 1e-6), f"err={hs:.2e}"))
    return out


def _funding_checks(rng):
    out = []
    model = BlackScholes.diagonal([0.05, 0.03], [0.3, 0.2], 0.02)
    phi = PowerIndex([1.0, 1.0], [2.0, 1.0])
    hist = np.abs(rng.normal(1, 0.2, (40, 3, 2)))
    for H in (AnchorFunction.linear(2.0), AnchorFunction.piecewise(1.5, 3.0), AnchorFunction.one_sided(2.0, 4.0)):
        rate = make_spot_rate(H, phi, model, n_test=2000)
        h_term = rate.anchor_terms(0.5, hist).H_term
        out.append((f"funding.anchor_invariance.{H.kind}", bool(np.all(h_term == 0)), ""))
    cubic = AnchorFunction.custom(lambda a, b: (a - b) ** 3, 1.0)
    out.append(("funding.rejects_cubic_anchor", not anchor_monotonicity_test(cubic, 2000).passed, ""))
    return out


def _calibrate_checks():
    thr = ell_threshold(0.02, 0.3, 1).value
    lo, hi = feasible_ell_interval(0.02, 1, 1 / 1095, 0.3)
    return [
        ("calibrate.threshold", abs(thr - 0.26227) <= 1e-4, f"{thr:.6f}"),
        ("calibrate.feasible_interval", abs(lo - 1.26227) <= 1e-4 and abs(hi - 15.75125) <= 1e-3, f"({lo:.6f}, {hi:.6f})"),
    ]


def _moment_checks(seed):
    from .market import moment_bound_check

    out = []
    model = BlackScholes.diagonal([0.05], [0.3], 0.02)
    ens = simulate_q(model, [1.0], TimeGrid.from_horizon(1.0, 1e-2), RandomSource(seed), 20000, scheme="exact")
    b = model.bounds
    for p in (1.0, 2.0):
        dc = decay_constants(b.C1, b.C_r, b.C3, p, 2.0 * ell_threshold(b.C_r, b.C3, p).value + 1, model.r)
        rep = moment_bound_check(ens, p, dc.L6, dc.L7, dc.L8, increment_constant(b.C1, b.C_r, b.C3, p),
                                 deltas=(0.05, 0.1, 0.5))
        out.append((f"market.moment_bound_p{p:g}", bool(rep.passed), f"measured={rep.measured:.4f} bound={rep.bound:.4f}"))
    return out


def run_selftest(seed: int = 0):
    rng = np.random.default_rng(seed)
    results = []
    for group in (_paths_checks(rng), _target_checks(rng), _funding_checks(rng), _calibrate_checks(),
                  _moment_checks(seed)):
        results.extend(group)
    return results
