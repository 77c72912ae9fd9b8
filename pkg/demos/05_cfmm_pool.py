"""A perpetual on a geometric-mean liquidity pool.

The pool's deposit value is a weighted geometric mean of asset prices.  It
reduces to one lognormal wealth process with a known drag, so the
one-dimensional machinery prices and hedges it.
"""

from pathlib import Path

from perpfund import experiments as ex
from perpfund.config import load_config

cfg = load_config(Path(__file__).parents[1] / "configs" / "cfmm.yaml", environ={})
cfg.model.kind, cfg.target.kind = "cfmm", "cfmm"
st = ex.build_setup(cfg)
print(f"reduced volatility |S| = {st.model.sigma_mat[0, 0]:.4f}, drag kappa = {st.extras['kappa']:.4f}")
res = ex.cfmm_identity(cfg, st, n_paths=200)
for name, c in res.checks.items():
    print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: max relative error {c['value']:.1e}")
