"""Why the anchor strength matters.

With a weak anchor the pricing equation has several solutions: the target
itself, but also rogue processes that satisfy the same dynamics.  Above the
threshold those impostors either stop solving the equation or grow too fast to
be admissible, and the solver recovers the target.
"""

import warnings

from perpfund.experiments import nonuniqueness_study
from perpfund.market import BlackScholes

model = BlackScholes.diagonal([0.0, 0.0], [1.0, 0.5], 1.0)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    res = nonuniqueness_study(model, [1.0, 1.0], dt=0.01, T=1.0, n_paths=2000, seed=1)

print("residual slope under dt-halving (>= 0.4: only discretisation error remains)")
for row in res.tables["residuals"]:
    print(f"  {row['regime']:>4} ell={row['ell']:<4g} {row['candidate']:>8}: slope {row['slope']:+.2f} "
          f"l2 {row['l2_finest']:.2e}")
print("admissibility constant of each candidate as X1(0) shrinks")
for row in res.tables["admissibility_scan"]:
    print("  " + "  ".join(f"{k}={v:.3g}" for k, v in row.items()))
for name, c in res.checks.items():
    print(f"{'PASS' if c['passed'] else 'FAIL'} {name}")
