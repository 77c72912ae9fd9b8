"""Explicit constants: BDG norm constants, the anchor-strength threshold, the
(ell, delta) feasibility region for windowed funding, moment-decay constants
(L6, L7, L8) and the coefficients of the windowed-vs-spot error bounds.

Conventions
-----------
BDG constants are in norm form, ``|| sup_t |int eta dB| ||_q <= M_q || (int |eta|^2)^(1/2) ||_q``.

* ``q >= 2``: ``M_q = q``, Doob's maximal constant ``q/(q-1)`` times Burkholder's
  martingale-transform constant ``q - 1``.  ``M_2 = 2``.
* ``1 < q < 2``: the smaller of Doob-Burkholder ``q/(q-1)^2`` and Lenglart's
  domination bound ``((2 - q/2)/(1 - q/2))^(1/q)``.
* ``q = 1``: Lenglart, ``M_1 = 3``.

The threshold minimises ``h(K) = K + (C_r/sqrt(2K) + M C3)^2 / 2`` over ``K > 0``
and multiplies by rho, with ``M = M_{max(rho, 2)}``.

Moment decay: for the risk-neutral asset SDE,
``E_s ||X||_T^p <= (L6 ||X||_s^p + L7) exp(L8 (T - s))`` with

    L6 = (1 + kappa) e^p
    L7 = C_kappa (e C1 M (1 + 1/eps))^p
    L8 = (eps + K + (C_r/sqrt(2K) + M C3)^2 / 2) p

where ``C_kappa = (1 - (1 + kappa)^(-1/(p-1)))^(-(p-1))`` is the constant in
``(x + y)^p <= (1 + kappa) x^p + C_kappa y^p`` (``C_kappa = 1`` when p = 1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from .errors import ConfigError, InfeasibleError, NumericError

__all__ = [
    "bdg_constant",
    "golden_section",
    "ThresholdResult",
    "ell_threshold",
    "FeasibilityReport",
    "delayed_feasibility",
    "max_ell_for_delta",
    "feasible_ell_interval",
    "DecayConstants",
    "decay_constants",
    "increment_constant",
    "ErrorBoundCoeffs",
    "error_bound_coeffs",
    "PUBLISHED_Y_ENVELOPE",
    "published_z_envelope",
]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def bdg_constant(q: float) -> float:
    if not q >= 1:
        raise ConfigError(f"BDG order must be >= 1, got {q}")
    if q >= 2:
        return float(q)
    lenglart = ((2.0 - q / 2.0) / (1.0 - q / 2.0)) ** (1.0 / q)
    if q == 1:
        return lenglart
    return min(lenglart, q / (q - 1.0) ** 2)


def golden_section(f, a: float, b: float, tol: float = 1e-8, max_iter: int = 500):
    """Minimise a unimodal scalar function on [a, b]; returns (x, f(x))."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    else:
        raise NumericError("golden-section search did not converge")
    x = 0.5 * (a + b)
    return x, f(x)


def _threshold_objective(K: float, C_r: float, C3: float, M: float) -> float:
    return K + 0.5 * (C_r / math.sqrt(2.0 * K) + M * C3) ** 2


@dataclass(frozen=True)
class ThresholdResult:
    value: float
    K: float
    M: float

    def __float__(self):
        return self.value


def ell_threshold(C_r: float, C3: float, rho: float, bracket=(1e-8, 1e3), tol=1e-8) -> ThresholdResult:
    """inf_K (K + (C_r/sqrt(2K) + M C3)^2/2) * rho, searched on log K."""
    if C_r < 0 or C3 < 0 or rho <= 0:
        raise ConfigError("ell_threshold needs C_r >= 0, C3 >= 0, rho > 0")
    M = bdg_constant(max(rho, 2.0))
    if C_r == 0:
        return ThresholdResult(0.5 * (M * C3) ** 2 * rho, 0.0, M)
    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    u, val = golden_section(lambda u: _threshold_objective(math.exp(u), C_r, C3, M), lo, hi, tol)
    return ThresholdResult(val * rho, math.exp(u), M)


def _iia(ell: float, r: float, delta: float) -> float:
    x = abs(6.0 * (ell - r) ** 2 - 2.0 * ell + 2.0) * delta
    return 1.0 / 3.0 if x == 0 else math.expm1(x) / (3.0 * x)


def _delay_coefficient(ell: float, r: float) -> float:
    a = abs(ell - r)
    return a * a + 0.5 * a * ell + 2.0 * a


def _iib(ell: float, r: float, rho: float, delta: float) -> float:
    return math.exp(rho) * _delay_coefficient(ell, r) * delta


@dataclass(frozen=True)
class FeasibilityReport:
    ell: float
    r: float
    rho: float
    delta: float
    ell_lower: float
    cond_i_margin: float
    cond_iia: float
    cond_iib: float
    pass_i: bool
    pass_iia: bool
    pass_iib: bool
    binding: str

    @property
    def feasible(self) -> bool:
        return self.pass_i and self.pass_iia and self.pass_iib

    def as_dict(self):
        d = asdict(self)
        d["feasible"] = self.feasible
        return d


def delayed_feasibility(ell: float, r: float, rho: float, delta: float, C3: float, C_r: float | None = None) -> FeasibilityReport:
    """Check the three windowed-funding conditions.

    (i) ell > 1 + threshold; (ii-a) (e^{|M|delta} - 1)/(3|M|delta) < 1 with
    M = 6(ell-r)^2 - 2 ell + 2; (ii-b) e^rho ((ell-r)^2 + |ell-r| ell/2 + 2|ell-r|) delta < 1.
    ``C_r`` defaults to |r| (constant short rate).
    """
    if delta <= 0 or delta >= 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")
    C_r = abs(r) if C_r is None else C_r
    lower = 1.0 + ell_threshold(C_r, C3, rho).value
    iia = _iia(ell, r, delta)
    iib = _iib(ell, r, rho, delta)
    margins = {"i": (ell - lower) / lower, "ii-a": 1.0 - iia, "ii-b": 1.0 - iib}
    binding = min(margins, key=margins.get)
    return FeasibilityReport(
        ell, r, rho, delta, lower, ell - lower, iia, iib,
        ell > lower, iia < 1.0, iib < 1.0, binding,
    )


def _upper_root(g, lo: float, xtol: float) -> float:
    """Largest ell with g(ell) < 1 given g increasing on [lo, inf) and g(lo) < 1."""
    hi = max(2.0 * lo, 1.0)
    while g(hi) < 1.0:
        hi *= 2.0
        if hi > 1e12:
            return math.inf
    return optimize.bisect(lambda x: g(x) - 1.0, lo, hi, xtol=xtol)


def max_ell_for_delta(r: float, rho: float, delta: float, xtol: float = 1e-9) -> float:
    """Upper end of the ell range allowed by (ii-a) and (ii-b); nan if empty."""
    # both conditions are increasing in ell beyond these points
    lo_b = abs(r)
    lo_a = max(lo_b, (6.0 * r + 1.0) / 6.0)
    ub = _upper_root(lambda x: _iib(x, r, rho, delta), lo_b, xtol) if _iib(lo_b, r, rho, delta) < 1 else math.nan
    ua = _upper_root(lambda x: _iia(x, r, delta), lo_a, xtol) if _iia(lo_a, r, delta) < 1 else math.nan
    return min(ua, ub)


def feasible_ell_interval(r: float, rho: float, delta: float, C3: float, C_r: float | None = None):
    """(lower, upper) open interval of admissible ell, or None when empty."""
    C_r = abs(r) if C_r is None else C_r
    lower = 1.0 + ell_threshold(C_r, C3, rho).value
    upper = max_ell_for_delta(r, rho, delta)
    if not upper > lower:
        return None
    return lower, upper


def _binomial_constant(kappa: float, p: float) -> float:
    if p == 1:
        return 1.0
    if kappa <= 0:
        return math.inf
    lam = (1.0 + kappa) ** (-1.0 / (p - 1.0))
    return (1.0 - lam) ** (-(p - 1.0))


@dataclass(frozen=True)
class DecayConstants:
    C1: float
    C_r: float
    C3: float
    rho: float
    ell: float
    r: float
    delta: float | None
    K: float
    eps: float
    kappa: float
    M: float
    L6: float
    L7: float
    L8: float

    @property
    def delayed(self) -> bool:
        return self.delta is not None

    def as_dict(self):
        return asdict(self)


def decay_constants(C1, C_r, C3, rho, ell, r, delta=None, K=None, eps=None, kappa=None) -> DecayConstants:
    """Moment-decay constants with side conditions checked.

    Delayed mode (``delta`` given) requires L8 < ell - 1 and
    L6 ((ell-r)^2 + |ell-r| ell/2 + 2|ell-r|) delta < 1; spot mode requires L8 < ell.

    Unset slack parameters are chosen as follows.  K minimises the threshold
    objective.  eps takes half of the gap left below the L8 cap.  kappa is 0
    when rho = 1, otherwise half of the room left by the delay condition
    (capped at 1).
    """
    th = ell_threshold(C_r, C3, rho)
    M = th.M
    if K is None:
        K = th.K if th.K > 0 else 1e-8
    base = _threshold_objective(K, C_r, C3, M) * rho
    cap = ell - 1.0 if delta is not None else ell
    if eps is None:
        if base >= cap:
            raise InfeasibleError(f"L8 >= {cap:g} for every eps > 0 (ell too small)")
        eps = 0.5 * (cap - base) / rho
    coef = math.exp(rho) * _delay_coefficient(ell, r) * delta if delta is not None else 0.0
    if kappa is None:
        if rho == 1:
            kappa = 0.0
        elif delta is None:
            kappa = 1.0
        else:
            if coef >= 1:
                raise InfeasibleError("L6 delay condition fails already at kappa = 0")
            kappa = min(1.0, 0.5 * (1.0 / coef - 1.0))
    L6 = (1.0 + kappa) * math.exp(rho)
    M7 = max(M, bdg_constant(rho))
    L7 = _binomial_constant(kappa, rho) * (math.e * C1 * M7 * (1.0 + 1.0 / eps)) ** rho
    L8 = (eps + _threshold_objective(K, C_r, C3, M)) * rho
    if not L8 < cap:
        raise InfeasibleError(f"L8 = {L8:.6g} violates L8 < {cap:g}")
    if delta is not None and not L6 * _delay_coefficient(ell, r) * delta < 1:
        raise InfeasibleError("L6 ((ell-r)^2 + |ell-r| ell/2 + 2|ell-r|) delta >= 1")
    return DecayConstants(C1, C_r, C3, rho, ell, r, delta, K, eps, kappa, M, L6, L7, L8)


def increment_constant(C1: float, C_r: float, C3: float, p: float) -> float:
    """L9 with E||X - X_s||^p_{s+d} <= L9 (1 + E||X||^p_{s+d}) d^{p/2} for d <= 1."""
    Mp = bdg_constant(max(p, 1.0))
    return 2.0 ** max(p - 1.0, 0.0) * (C_r + Mp * (C1 + C3)) ** p


@dataclass(frozen=True)
class ErrorBoundCoeffs:
    a: float
    b: float
    L1: float
    L2: float
    L3: float
    L4: float
    L5: float
    T: float
    form: str

    def y_bound(self, x_norm_rho, delta: float):
        """(L1 + L2 ||X||_T^rho) sqrt(delta)."""
        return (self.L1 + self.L2 * np.asarray(x_norm_rho)) * math.sqrt(delta)

    def z_bound(self, e_x_2rho: float, e_x_rho: float, delta: float) -> float:
        return (self.L3 * e_x_2rho + self.L4 * e_x_rho + self.L5) * math.sqrt(delta)

    def as_dict(self):
        return asdict(self)


def error_bound_coeffs(dc: DecayConstants, C_phi: float, C5: float, T: float, form: str | None = None) -> ErrorBoundCoeffs:
    """Coefficients of |Y^delta - Y| <= (L1 + L2 ||X||^rho) sqrt(delta) and the Z bound.

    ``form`` is "rho" or "1"; by default "1" when rho == 1.
    """
    if dc.delta is None:
        raise ConfigError("error bounds need delayed-mode decay constants")
    form = form or ("1" if dc.rho == 1 else "rho")
    ell, r, d = dc.ell, dc.r, dc.delta
    L6, L7, L8 = dc.L6, dc.L7, dc.L8
    C1, C3 = dc.C1, dc.C3
    sd = math.sqrt(d)
    g = ell - L8
    lr = abs(ell - r)
    if g <= 0:
        raise InfeasibleError("ell - L8 must be positive")

    third = (lr * C_phi * L6 * sd / g) * (2 * L6 + (g + ell * L6) / (2 * g))
    cphi_part = C_phi * sd * (
        2 * (L7 + 1 + lr * L7 * (1 + L6) / g + lr / ell)
        + lr * (L7 / g + ell * L6 * L7 / (2 * g * g) + 1 / ell)
    )
    if form == "rho":
        Mr = bdg_constant(dc.rho)
        a = 2 * C_phi * L6 * sd + (L6 * C5 / g) * (1.5 * r * sd + 2 * Mr * C3 + 4 * (1 + Mr * C1) / 3) + third
        b = cphi_part + C5 * (
            2 * (1 + Mr * C1) + r * sd / 2 + 2 * Mr * C3 * (g + L7) / (3 * g)
            + L7 * (9 * r * sd + 8 * (1 + Mr * C1)) / (6 * g)
        )
    elif form == "1":
        M1 = bdg_constant(1)
        a = 2 * C_phi * L6 * sd + (L6 * C5 / g) * (r * sd / 2 + 2 * M1 * C3 / 3) + third
        b = cphi_part + C5 * (r * L7 * sd / (2 * g) + 2 * L7 * M1 * C3 / (3 * g) + 2 * (1 + M1 * C1) / (3 * ell))
    else:
        raise ConfigError(f"unknown bound form {form!r}")

    q = lr * lr + lr * ell / 2 + 2 * lr
    den2 = 1 - L6 * d * q
    den1 = 1 - d * q
    if den2 <= 0 or den1 <= 0:
        raise InfeasibleError("error-bound denominator is not positive")
    L2 = (a + lr * L6 * C_phi * (1 + lr * L6 / g) * sd) / den2
    L1 = (
        b + a * lr * L7 * d * (2 + ell / 2 + lr)
        + lr * C_phi * (L7 + 1 + L6 * L7 * lr / g + L7 * lr / g + lr / ell) * sd
    ) / den1
    L3 = sd * L2**2 + 2 * L2 * (2 * C_phi + lr * (2 * C_phi * L6 / g + sd * L2)) * T
    L4 = 2 * sd * L1 * L2 * (1 + 2 * lr * T) + 2 * (
        2 * C_phi * (L2 + L1) + 2 * lr * C_phi * (L2 * L7 + L1 * L6) / g + L2 * C_phi / ell
    ) * T
    L5 = sd * L1**2 * (1 + 2 * lr * T) + 4 * L1 * C_phi * (1 + lr * (L7 / g + 1 / ell)) * T
    return ErrorBoundCoeffs(a, b, L1, L2, L3, L4, L5, T, form)


# Published coefficients for the Black-Scholes example (r=0.02, sigma=0.3, rho=1,
# delta=1/1095), used only as reference envelopes.
PUBLISHED_Y_ENVELOPE = {"L2": 3.68432, "L1": 0.84216, "slope": 0.11134, "intercept": 0.02545}


def published_z_envelope(T: float, e_x2: float, e_x: float, scaled: bool = True) -> float:
    """Published bound on E int_0^T |Z^delta - Z|^2 du at delta = 1/1095.

    ``scaled=True`` returns the sqrt(delta)-scaled display, otherwise the
    numerically simplified one.
    """
    if scaled:
        return ((0.41021 + 82.041 * T) * e_x2 + (0.06227 + 31.97983 * T) * e_x + 0.00236 + 2.78067 * T) * math.sqrt(1 / 1095)
    return (0.01239 + 2.47927 * T) * e_x2 + (0.00188 + 0.96642 * T) * e_x + 0.00007 + 0.084031 * T
