"""Funding portfolios: replication from (Y, Z), wealth with funding fees,
admissibility and Q-martingale checks.

Wealth obeys dV = phi0 dG + phi . dX - F ds.  Under Q,
V/G + int F/G du is a martingale for any square-integrable holding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularDiffusionError, StateError
from .market import money_market
from .paths import TimeGrid, running_sup_norm, window_integrals

__all__ = [
    "FundingPortfolio",
    "WealthTrajectory",
    "replicate",
    "simulate_wealth",
    "AdmissibilityReport",
    "admissibility_check",
    "MartingaleReport",
    "martingale_check",
    "compensated_process",
    "write_ledger_csv",
]

SINGULAR_COND = 1e12


@dataclass(frozen=True, eq=False)
class FundingPortfolio:
    """Holdings on the grid: ``phi0`` (n_paths, n+1) in G, ``phi`` (n_paths, n+1, m) in X."""

    phi0: np.ndarray
    phi: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.phi0)) and np.all(np.isfinite(self.phi))):
            raise StateError("portfolio holdings must be finite")

    def value(self, X: np.ndarray) -> np.ndarray:
        return self.phi0 * self.G + np.sum(self.phi * X, axis=-1)

    def __add__(self, other: "FundingPortfolio") -> "FundingPortfolio":
        return FundingPortfolio(self.phi0 + other.phi0, self.phi + other.phi, self.G)

    def scaled(self, c: float) -> "FundingPortfolio":
        return FundingPortfolio(c * self.phi0, c * self.phi, self.G)

    @classmethod
    def zero(cls, ensemble, model) -> "FundingPortfolio":
        G = money_market(model, ensemble)
        return cls(np.zeros_like(G), np.zeros(ensemble.values.shape), G)

    @classmethod
    def buy_and_hold(cls, ensemble, model, units) -> "FundingPortfolio":
        G = money_market(model, ensemble)
        phi = np.broadcast_to(np.asarray(units, dtype=float), ensemble.values.shape).copy()
        return cls(np.zeros_like(G), phi, G)


@dataclass(frozen=True, eq=False)
class WealthTrajectory:
    V: np.ndarray  # (n_paths, n+1)
    fee: np.ndarray  # F at each grid index; last column is the rate at T (not accrued)
    accrued_fees: np.ndarray  # int_0^t F du, left-point

    def fee_flows(self):
        """(long, short) instantaneous fee flows; they cancel by construction."""
        return self.fee, -self.fee


def replicate(target, model, solution) -> FundingPortfolio:
    """phi = Z sigma^{-1}, phi0 = (Y - phi . X)/G.  ``target`` is informational."""
    ens = solution.ensemble
    grid = ens.grid
    G = money_market(model, ens)
    N, n1, m = ens.values.shape
    phi = np.empty((N, n1, m))
    for k in range(n1):
        sig = np.broadcast_to(model.sigma(grid.time(k), ens.hist(k)), (N, m, m))
        if np.any(np.linalg.cond(sig) > SINGULAR_COND):
            raise SingularDiffusionError(f"sigma is singular at t={grid.time(k)}")
        phi[:, k] = np.linalg.solve(np.swapaxes(sig, -1, -2), solution.Z[:, k, :, None])[..., 0]
    phi0 = (solution.Y - np.sum(phi * ens.values, axis=-1)) / G
    return FundingPortfolio(phi0, phi, G)


def _windowed_fee(rate, grid: TimeGrid, pointwise: np.ndarray, k: int) -> np.ndarray:
    """Trailing window mean of the pointwise fee samples 0..k, using only the samples the window touches."""
    if k == 0:
        return pointwise[:, 0]
    j0 = max(0, k - int(math.ceil(rate.delta / grid.dt)) - 1)
    sub = TimeGrid(grid.time(j0), grid.dt, k - j0)
    return window_integrals(pointwise[:, j0 : k + 1], sub, rate.delta)[:, -1] / rate.delta


def simulate_wealth(portfolio: FundingPortfolio, rate, ensemble, V0=None, fee_at: str = "live",
                    reference: np.ndarray | None = None) -> WealthTrajectory:
    """Forward accumulation of dV = phi0 dG + phi . dX - F dt.

    ``fee_at="live"`` evaluates F at the running wealth V; ``"reference"``
    evaluates it at ``reference`` (e.g. the analytic target) for diagnostics.
    ``rate=None`` means no fee.
    """
    if fee_at not in ("live", "reference"):
        raise ConfigError("fee_at must be 'live' or 'reference'")
    if fee_at == "reference" and reference is None:
        raise ConfigError("fee_at='reference' needs a reference array")
    grid = ensemble.grid
    X, G = ensemble.values, portfolio.G
    if portfolio.phi.shape != X.shape:
        raise StateError("portfolio not aligned with the ensemble")
    N, n1, _ = X.shape
    V = np.empty((N, n1))
    F = np.zeros((N, n1))
    V[:, 0] = portfolio.value(X)[:, 0] if V0 is None else V0
    windowed = rate is not None and getattr(rate, "windowed", False)
    pointwise = np.zeros((N, n1)) if windowed else None
    spot = rate.spot if windowed else None
    dG = np.diff(G, axis=1)
    dX = np.diff(X, axis=1)
    for k in range(n1):
        y = V[:, k] if fee_at == "live" else reference[:, k]
        if rate is not None:
            t, hist = grid.time(k), ensemble.hist(k)
            if windowed:
                pointwise[:, k] = spot(t, hist, y)
                F[:, k] = _windowed_fee(rate, grid, pointwise, k)
            else:
                F[:, k] = rate(t, hist, y)
        if k < n1 - 1:
            V[:, k + 1] = (V[:, k] + portfolio.phi0[:, k] * dG[:, k]
                           + np.sum(portfolio.phi[:, k] * dX[:, k], axis=-1) - F[:, k] * grid.dt)
    acc = np.zeros_like(F)
    np.cumsum(F[:, :-1] * grid.dt, axis=1, out=acc[:, 1:])
    if not np.all(np.isfinite(V)):
        raise StateError("wealth became non-finite")
    return WealthTrajectory(V, F, acc)


@dataclass(frozen=True)
class AdmissibilityReport:
    L_hat: float
    ratio: np.ndarray  # per grid index, max over paths
    cap: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.L_hat) and self.L_hat <= self.cap)


def admissibility_check(V, ensemble, rho: float, cap: float = 100.0) -> AdmissibilityReport:
    """L_hat = max over paths and grid times of ||V||_t / (1 + ||X||_t^rho)."""
    V = V.V if isinstance(V, WealthTrajectory) else np.asarray(V, dtype=float)
    vn = np.maximum.accumulate(np.abs(V), axis=1)
    xn = running_sup_norm(ensemble.values)
    ratio = np.max(vn / (1 + xn**rho), axis=0)
    return AdmissibilityReport(float(np.max(ratio)), ratio, cap)


def compensated_process(Y: np.ndarray, F: np.ndarray, G: np.ndarray, dt: float) -> np.ndarray:
    """Y/G + int_0^t F/G du with the left-point sum."""
    comp = np.zeros_like(Y)
    np.cumsum(F[:, :-1] / G[:, :-1] * dt, axis=1, out=comp[:, 1:])
    return Y / G + comp


@dataclass(frozen=True)
class MartingaleReport:
    times: np.ndarray
    drift: np.ndarray  # mean(M_t) - M_0
    stderr: np.ndarray
    threshold: float

    @property
    def z(self) -> np.ndarray:
        return self.drift / np.where(self.stderr > 0, self.stderr, np.inf)

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z) <= self.threshold))

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


def martingale_check(trajectories, rate, ensemble, model=None, n_checkpoints: int = 10,
                     threshold: float = 3.0) -> MartingaleReport:
    """Drift of the compensated discounted process at ``n_checkpoints`` equally spaced times.

    ``trajectories`` is a WealthTrajectory (its own fee series is used when
    ``rate`` is None) or an array of Y values with a funding rate to evaluate.
    """
    if ensemble.measure != "Q":
        raise StateError("martingale check needs a Q-ensemble")
    model = ensemble.model if model is None else model
    if isinstance(trajectories, WealthTrajectory):
        Y = trajectories.V
        F = trajectories.fee if rate is None else rate.series(ensemble, Y).fee
    else:
        Y = np.asarray(trajectories, dtype=float)
        if rate is None:
            F = np.zeros_like(Y)
        elif isinstance(rate, np.ndarray):
            F = rate
        else:
            F = _fee_series(rate, ensemble, Y)
    G = money_market(model, ensemble)
    M = compensated_process(Y, F, G, ensemble.grid.dt)
    n = ensemble.grid.n_steps
    ks = np.unique(np.linspace(0, n, n_checkpoints + 1).round().astype(int)[1:])
    dev = M[:, ks] - M[:, :1]
    se = dev.std(axis=0, ddof=1) / math.sqrt(dev.shape[0])
    return MartingaleReport(ensemble.grid.times[ks], dev.mean(axis=0), se, threshold)


def _fee_series(rate, ensemble, Y):
    try:
        return rate.series(ensemble, Y).fee
    except (AttributeError, NotImplementedError):
        g = ensemble.grid
        return np.stack([rate(g.time(k), ensemble.hist(k), Y[:, k]) for k in range(g.n_steps + 1)], axis=1)


def write_ledger_csv(file, trajectory: WealthTrajectory, ensemble, reference=None, max_paths: int | None = None) -> None:
    """Columns t,path_id,V,fee_accrued,tracking_error (V - reference, or blank)."""
    long_, short_ = trajectory.fee_flows()
    if not np.array_equal(long_ + short_, np.zeros_like(long_)):
        raise StateError("fee flows do not net to zero")
    V = trajectory.V
    n_paths = V.shape[0] if max_paths is None else min(max_paths, V.shape[0])
    times = ensemble.grid.times
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "path_id", "V", "fee_accrued", "tracking_error"])
        for i in range(n_paths):
            for k, t in enumerate(times):
                te = "" if reference is None else repr(float(V[i, k] - reference[i, k]))
                w.writerow([repr(float(t)), i, repr(float(V[i, k])), repr(float(trajectory.accrued_fees[i, k])), te])
