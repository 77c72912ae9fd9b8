"""How strong must the anchor be?

A funding rate pulls the perpetual price toward its target with strength ell.
Below a model-dependent threshold the price is not pinned down uniquely; with a
trailing-window rate there is also an upper limit set by the window length.
"""

from perpfund.calibrate import decay_constants, delayed_feasibility, ell_threshold, feasible_ell_interval

r, sigma = 0.02, 0.3
thr = ell_threshold(r, sigma, rho=1)
print(f"Black-Scholes, r={r}, sigma={sigma}")
print(f"  uniqueness threshold: ell > {thr.value:.5f}  (attained at K={thr.K:.4f})")

for delta, label in [(1 / 1095, "8 hours"), (1 / 365, "1 day"), (1 / 52, "1 week")]:
    iv = feasible_ell_interval(r, 1, delta, sigma)
    shown = "empty" if iv is None else f"({iv[0]:.4f}, {iv[1]:.4f})"
    print(f"  window {label:>7}: feasible ell interval {shown}")

rep = delayed_feasibility(2.0, r, 1, 1 / 1095, sigma)
print(f"\nell=2, 8h window: feasible={rep.feasible}, tightest condition: {rep.binding}")
dc = decay_constants(0.0, r, sigma, 1, 2.0, r, delta=1 / 1095)
print(f"  moment decay rate L8={dc.L8:.4f}, so truncation errors decay like exp(-{2.0 - dc.L8:.3f} T)")
