"""Anchor functions and funding-rate functionals.

The designed spot rate for a target phi is

    Phi(s, gamma, y) = H(phi(s, gamma), y) - L phi(s, gamma) + r(s, gamma) y

with L the generator from :mod:`perpfund.target`.  Every evaluation returns
the three parts separately: ``H_term``, ``generator_term`` (= -L phi) and
``carry_term`` (= r y).  The fee is their sum and is paid short -> long.

The windowed rate averages the constant-proportion rate over [s - delta, s]:

    Phi^delta(s, gamma, eta) = (1/delta) int_{s-delta}^s Phi(u, gamma_u, eta(u)) du,

where integrands are frozen at their t = 0 value for u < 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, KindMismatchError, StateError
from .paths import GridPath, StoppedPathView, TimeGrid, window_integrals
from .target import LinearIndex, PowerIndex, TargetFunctional, generator

__all__ = [
    "AnchorFunction",
    "anchor_monotonicity_test",
    "FeeTerms",
    "SpotRate",
    "ModelFreeRate",
    "WindowedRate",
    "CustomRate",
    "make_spot_rate",
    "make_const_prop_rate",
    "make_model_free_rate",
    "make_windowed_rate",
    "RealizedQV",
    "ExactQV",
    "ConstantLogGrowth",
    "eval_rate",
    "g_functional",
    "g_series",
    "driver_growth_constants",
    "write_fee_csv",
    "DEFAULT_DELTA",
]

DEFAULT_DELTA = 1.0 / 1095.0


@dataclass(frozen=True)
class AnchorFunction:
    """H(y1, y2).  ``ell`` is the recorded monotonicity constant, ``lipschitz`` the Lipschitz constant in y2."""

    kind: str
    ell1: float
    ell2: float | None = None
    breakpoint: float = 1.0
    fn: object = None
    declared_ell: float | None = None

    @classmethod
    def linear(cls, ell):
        return cls("linear", float(ell))

    @classmethod
    def piecewise(cls, ell1, ell2, breakpoint=1.0):
        """ell1 (y1 - y2) when |y1 - y2| <= breakpoint, ell2 (y1 - y2) otherwise."""
        return cls("piecewise", float(ell1), float(ell2), float(breakpoint))

    @classmethod
    def one_sided(cls, ell1, ell2):
        """ell1 (y1 - y2) when y1 > y2, ell2 (y1 - y2) otherwise."""
        return cls("one_sided", float(ell1), float(ell2))

    @classmethod
    def custom(cls, fn, ell):
        return cls("custom", float(ell), fn=fn, declared_ell=float(ell))

    def __post_init__(self):
        if self.kind not in ("linear", "piecewise", "one_sided", "custom"):
            raise ConfigError(f"unknown anchor kind {self.kind!r}")
        if self.ell1 <= 0 or (self.ell2 is not None and self.ell2 <= 0):
            raise ConfigError("anchor slopes must be positive")

    @property
    def ell(self) -> float:
        if self.kind in ("linear", "custom"):
            return self.ell1
        return min(self.ell1, self.ell2)

    @property
    def lipschitz(self) -> float:
        if self.kind in ("linear", "custom"):
            return self.ell1
        return max(self.ell1, self.ell2)

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear" or (self.kind != "custom" and self.ell1 == self.ell2)

    def __call__(self, y1, y2):
        d = np.asarray(y1, dtype=float) - np.asarray(y2, dtype=float)
        if self.kind == "linear":
            return self.ell1 * d
        if self.kind == "piecewise":
            return np.where(np.abs(d) <= self.breakpoint, self.ell1, self.ell2) * d
        if self.kind == "one_sided":
            return np.where(d > 0, self.ell1, self.ell2) * d
        return np.asarray(self.fn(y1, y2), dtype=float)


@dataclass(frozen=True)
class MonotonicityReport:
    n: int
    zero_on_diagonal: bool
    min_ratio: float
    required_ell: float

    @property
    def passed(self) -> bool:
        return self.zero_on_diagonal and self.min_ratio >= self.required_ell * (1 - 1e-9) and self.min_ratio > 0


def anchor_monotonicity_test(H: AnchorFunction, n: int = 10_000, seed: int = 0) -> MonotonicityReport:
    """Randomised check of H(y, y) = 0 and (y2 - y2')(H(y1,y2) - H(y1,y2')) <= -ell |y2 - y2'|^2.

    Offsets y2 - y1 are drawn log-uniformly over [1e-4, 1e2] with random sign so
    that both the small-gap and large-gap regimes are covered.
    """
    rng = np.random.default_rng(seed)
    y1 = rng.normal(0.0, 10.0, n)
    d = np.exp(rng.uniform(np.log(1e-4), np.log(1e2), (2, n))) * rng.choice([-1.0, 1.0], (2, n))
    y2, y2p = y1 + d[0], y1 + d[1]
    same = np.isclose(y2, y2p, rtol=0, atol=1e-12)
    y2p = np.where(same, y2p + 1e-3, y2p)
    diag_ok = bool(np.all(np.abs(H(y1, y1)) <= 1e-12 * (1 + np.abs(y1))))
    ratio = -(y2 - y2p) * (H(y1, y2) - H(y1, y2p)) / (y2 - y2p) ** 2
    return MonotonicityReport(n, diag_ok, float(ratio.min()), H.ell)


@dataclass(frozen=True)
class FeeTerms:
    H_term: np.ndarray
    generator_term: np.ndarray
    carry_term: np.ndarray

    @property
    def fee(self) -> np.ndarray:
        return self.H_term + self.generator_term + self.carry_term


def _rate_of(model, t, hist):
    return model.short_rate(t, hist)


class FundingRate:
    kind: str = "custom"
    validated: bool = False
    windowed: bool = False

    def terms(self, t, hist, y) -> FeeTerms:
        raise NotImplementedError

    def __call__(self, t, hist, y):
        return self.terms(t, hist, y).fee

    def series(self, ensemble, Y) -> FeeTerms:
        """Fee terms at every grid index; ``Y`` has shape (n_paths, n_steps + 1)."""
        grid = ensemble.grid
        parts = [self.terms(grid.time(k), ensemble.hist(k), Y[:, k]) for k in range(grid.n_steps + 1)]
        return FeeTerms(*(np.stack([getattr(p, f) for p in parts], axis=1)
                          for f in ("H_term", "generator_term", "carry_term")))


@dataclass(frozen=True, eq=False)
class SpotRate(FundingRate):
    """H(phi, y) - L phi + r y."""

    H: AnchorFunction
    phi: TargetFunctional
    model: object
    kind: str = "spot"
    validated: bool = True

    def generator_values(self, t, hist):
        return generator(self.phi, self.model, t, hist)

    def terms(self, t, hist, y):
        y = np.asarray(y, dtype=float)
        if y.ndim and y.shape != hist.shape[:-2]:
            raise KindMismatchError("spot rates take a Y state per path, not a Y path")
        phi = self.phi.evaluate(t, hist)
        lphi = self.generator_values(t, hist)
        r = _rate_of(self.model, t, hist)
        return FeeTerms(self.H(phi, y), -lphi, r * y)

    def anchor_terms(self, t, hist) -> FeeTerms:
        return self.terms(t, hist, self.phi.evaluate(t, hist))

    def driver(self, t, hist, y):
        """f(s, gamma, y) = -r y + Phi(s, gamma, y)."""
        return self(t, hist, y) - _rate_of(self.model, t, hist) * np.asarray(y)


def make_spot_rate(H: AnchorFunction, phi: TargetFunctional, model, n_test: int = 10_000) -> SpotRate:
    rep = anchor_monotonicity_test(H, n_test)
    if not rep.passed:
        raise ConfigError(
            f"anchor function fails the monotonicity test (min ratio {rep.min_ratio:.3g} < ell {rep.required_ell:.3g})"
        )
    return SpotRate(H, phi, model, kind="const_prop" if H.kind == "linear" else "spot")


def make_const_prop_rate(ell: float, phi: TargetFunctional, model) -> SpotRate:
    return SpotRate(AnchorFunction.linear(ell), phi, model, kind="const_prop")


class RealizedQV:
    """d<X_i, X_j>/ds from the trailing ``window`` squared increments."""

    def __init__(self, window: int = 256):
        if window < 1:
            raise ConfigError("realized-QV window needs at least 2 samples")
        self.window = int(window)

    def __call__(self, t, hist, dt):
        k = hist.shape[-2] - 1
        if k < 1:
            raise StateError("realized QV needs at least 2 samples")
        w = min(self.window, k)
        dX = np.diff(hist[..., -(w + 1):, :], axis=-2)
        return np.einsum("...ki,...kj->...ij", dX, dX) / (w * dt)


class ExactQV:
    """sigma sigma^T from a model (reference estimator)."""

    def __init__(self, model):
        self.model = model

    def __call__(self, t, hist, dt):
        sig = self.model.sigma(t, hist)
        return np.einsum("...ik,...jk->...ij", sig, sig)


class ConstantLogGrowth:
    """d ln G / ds for a money market with constant rate r."""

    def __init__(self, r: float):
        self.r = float(r)

    def __call__(self, t, hist, dt):
        return np.full(hist.shape[:-2], self.r)


@dataclass(frozen=True, eq=False)
class ModelFreeRate(FundingRate):
    """Spot rate with sigma sigma^T and r replaced by observed QV and log-growth of G."""

    H: AnchorFunction
    phi: TargetFunctional
    qv: object
    log_growth: object
    dt: float
    kind: str = "spot"
    validated: bool = True

    def terms(self, t, hist, y):
        y = np.asarray(y, dtype=float)
        a = self.qv(t, hist, self.dt)
        r = self.log_growth(t, hist, self.dt)
        phi = self.phi
        lphi = (
            phi.d_s(t, hist)
            + 0.5 * np.sum(phi.d_xx(t, hist) * a, axis=(-2, -1))
            + r * np.sum(phi.d_x(t, hist) * hist[..., -1, :], axis=-1)
        )
        return FeeTerms(self.H(phi.evaluate(t, hist), y), -lphi, r * y)


def make_model_free_rate(H, phi, qv_estimator, g_estimator, dt: float) -> ModelFreeRate:
    return ModelFreeRate(H, phi, qv_estimator, g_estimator, dt)


@dataclass(frozen=True, eq=False)
class CustomRate(FundingRate):
    """User rate ``fn(t, hist, y) -> fee``; carries no uniqueness guarantees."""

    fn: object
    kind: str = "custom"
    validated: bool = False

    def terms(self, t, hist, y):
        fee = np.asarray(self.fn(t, hist, y), dtype=float)
        z = np.zeros_like(fee)
        return FeeTerms(z, fee, z)


@dataclass(frozen=True, eq=False)
class WindowedRate(FundingRate):
    """Trailing average over ``delta`` of the constant-proportion rate."""

    ell: float
    phi: TargetFunctional
    model: object
    delta: float
    kind: str = "windowed"
    validated: bool = True
    windowed: bool = True

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.model.constant_rate is None:
            raise ConfigError("windowed rates assume a constant short rate")

    @property
    def spot(self) -> SpotRate:
        return make_const_prop_rate(self.ell, self.phi, self.model)

    @property
    def r(self) -> float:
        return float(self.model.constant_rate)

    def pointwise_series(self, ensemble, Y) -> FeeTerms:
        return self.spot.series(ensemble, Y)

    def series(self, ensemble, Y) -> FeeTerms:
        pw = self.pointwise_series(ensemble, Y)
        grid, d = ensemble.grid, self.delta
        return FeeTerms(*(window_integrals(getattr(pw, f), grid, d) / d
                          for f in ("H_term", "generator_term", "carry_term")))

    def terms_on_path(self, grid: TimeGrid, x_hist: np.ndarray, y_hist: np.ndarray) -> FeeTerms:
        """Fee terms at the last time of ``x_hist`` (shape (..., k+1, m)) given Y samples (..., k+1)."""
        k = x_hist.shape[-2] - 1
        y_hist = np.asarray(y_hist, dtype=float)
        if y_hist.shape[-1] != k + 1:
            raise KindMismatchError("windowed rates need the Y path up to the evaluation time")
        sub = TimeGrid(grid.t_start, grid.dt, max(k, 1))
        spot = self.spot
        cols = [spot.terms(grid.time(j), x_hist[..., : j + 1, :], y_hist[..., j]) for j in range(k + 1)]
        out = []
        for f in ("H_term", "generator_term", "carry_term"):
            s = np.stack([getattr(c, f) for c in cols], axis=-1)
            if k == 0:
                out.append(s[..., 0])
            else:
                out.append(window_integrals(s, sub, self.delta)[..., -1] / self.delta)
        return FeeTerms(*out)

    def terms(self, t, hist, y):
        raise KindMismatchError("windowed rates need a Y path; use terms_on_path or series")


def make_windowed_rate(ell: float, phi: TargetFunctional, model, delta: float = DEFAULT_DELTA) -> WindowedRate:
    return WindowedRate(float(ell), phi, model, float(delta))


def _x_hist(x_path, s):
    if isinstance(x_path, (GridPath, StoppedPathView)):
        base = x_path if isinstance(x_path, GridPath) else x_path.base
        k = base.grid.index(s)
        if isinstance(x_path, StoppedPathView):
            k = min(k, x_path.stop_index)
        return base.grid, base.values[: k + 1]
    raise ConfigError("x_path must be a GridPath or StoppedPathView")


def eval_rate(rate: FundingRate, s: float, x_path, y) -> FeeTerms:
    """Fee terms at time s.  ``y`` is a Y state for spot kinds and a Y path
    (GridPath or samples on the X grid) for windowed rates."""
    grid, hist = _x_hist(x_path, s)
    if rate.windowed:
        if isinstance(y, GridPath):
            yv = y.values[: hist.shape[0], 0]
        else:
            yv = np.asarray(y, dtype=float)
            if yv.ndim == 0:
                raise KindMismatchError("windowed rates need a Y path, got a single Y state")
            yv = yv[: hist.shape[0]]
        return rate.terms_on_path(grid, hist, yv)
    if isinstance(y, GridPath) or np.ndim(y) > 0:
        raise KindMismatchError(f"{rate.kind} rates take a Y state")
    return rate.terms(grid.time(hist.shape[0] - 1), hist, float(y))


def g_series(ell: float, phi: TargetFunctional, model, delta: float, ensemble) -> np.ndarray:
    """Window mean of ell phi - L phi at every grid index; shape (n_paths, n_steps + 1)."""
    grid = ensemble.grid
    pw = np.stack(
        [ell * phi.evaluate(grid.time(k), ensemble.hist(k)) - generator(phi, model, grid.time(k), ensemble.hist(k))
         for k in range(grid.n_steps + 1)],
        axis=1,
    )
    return window_integrals(pw, grid, delta) / delta


def g_functional(ell: float, phi: TargetFunctional, model, delta: float, s: float, path: GridPath) -> float:
    grid = path.grid
    k = grid.index(s)
    vals = path.values[None, : k + 1]
    pw = np.array([ell * phi.evaluate(grid.time(j), vals[:, : j + 1])[0]
                   - generator(phi, model, grid.time(j), vals[:, : j + 1])[0] for j in range(k + 1)])
    if k == 0:
        return float(pw[0])
    return float(window_integrals(pw, TimeGrid(grid.t_start, grid.dt, k), delta)[-1] / delta)


def driver_growth_constants(phi: TargetFunctional, model, ell: float) -> dict:
    """C_phi, C5 and rho for the constant-proportion rate on a constant-rate
    Black-Scholes model, when phi is a power or linear index.

    Phi(s, gamma, 0) = sum_i a_i x_i^{p_i} with
    a_i = c_i (ell - p_i r - p_i (p_i - 1) |sigma_i|^2 / 2).
    """
    from .market import BlackScholes

    if not isinstance(model, BlackScholes):
        raise ConfigError("closed-form driver constants need a Black-Scholes model")
    if isinstance(phi, LinearIndex):
        if phi.c0 != 0:
            raise ConfigError("closed-form driver constants need c0 = 0")
        c, p = phi.c, np.ones_like(phi.c)
    elif isinstance(phi, PowerIndex):
        c, p = phi.c, phi.p
    else:
        raise ConfigError(f"no closed-form driver constants for {type(phi).__name__}")
    s2 = np.sum(model.sigma_mat**2, axis=1)
    a = c * (ell - p * model.r - 0.5 * p * (p - 1) * s2)
    rho = float(p.max())
    C_phi = float(np.abs(a).sum())
    C5 = C_phi / 3.0 if rho == 1 else float(np.sum(np.abs(a) * p))
    return {"C_phi": C_phi, "C5": C5, "rho": rho}


def write_fee_csv(file, times, terms: FeeTerms) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "fee", "H_term", "generator_term", "carry_term"])
        fee = terms.fee
        for j, t in enumerate(times):
            w.writerow([repr(float(t))] + [repr(float(v[j])) for v in
                                           (fee, terms.H_term, terms.generator_term, terms.carry_term)])
