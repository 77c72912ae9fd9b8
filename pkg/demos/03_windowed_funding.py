"""Exchanges charge funding on a trailing average, not the spot quantity.

Replacing the spot rate by its trailing-window mean gives a delayed pricing
equation, solved by Picard iteration.  How far does the price move as the
window shrinks?
"""

from perpfund import bsde
from perpfund.calibrate import delayed_feasibility
from perpfund.market import BlackScholes, RandomSource, simulate_q
from perpfund.paths import TimeGrid
from perpfund.target import PowerIndex

model = BlackScholes.diagonal([0.05], [0.3], 0.02)
phi = PowerIndex([1.0], [2.0])
ell = 2.0
ens = simulate_q(model, [1.0], TimeGrid(0.0, 2e-3, 2000), RandomSource(3), 2000, scheme="exact")
deltas = [d for d in (1 / 128, 1 / 256, 1 / 512, 1 / 1095) if delayed_feasibility(ell, 0.02, 2, d, 0.3).feasible]
study = bsde.delta_convergence_study(phi, model, ell, deltas, ens, bsde.SolverConfig(T_report=1.0), T=1.0)

print(f"{'delta':>10} {'E sup|dY|':>12} {'E int|dZ|^2':>12} {'Picard its':>10} {'max ratio':>10}")
for r in study.rows:
    print(f"{r['delta']:10.6f} {r['E_sup_dY']:12.3e} {r['E_int_dZ2']:12.3e} {r['picard_iterations']:10d} "
          f"{r['picard_max_sq_ratio']:10.2e}")
print(f"fitted log-log slope of the Y error: {study.slope_y:.2f}")
print("The error is tiny next to the price itself and shrinks at least like sqrt(delta);")
print("for smooth targets the observed order is close to one.")
print(f"regression error of the spot solution itself: {study.floor['spot_vs_analytic_E_sup']:.3e}")
