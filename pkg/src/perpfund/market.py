"""Market models, Euler-Maruyama path ensembles, Girsanov densities and the
money-market account.

A model supplies non-anticipative coefficients evaluated on a *history*
array ``hist`` of shape ``(..., k + 1, m)``: the samples of the stopped path
up to the current grid time ``t``.  The last row is the current state.

Physical dynamics:      dX = mu(s, X_s) ds + sigma(s, X_s) dW
Risk-neutral dynamics:  dX = r(s, X_s) X(s) ds + sigma(s, X_s) dB

Matrix norms are Frobenius norms; the declared constants follow that choice.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    SimulationBlowupError,
    SingularDiffusionError,
    StateError,
)
from .paths import GridPath, TimeGrid, running_sup_norm, write_path_csv

__all__ = [
    "BoundConstants",
    "MarketModel",
    "FunctionalModel",
    "BlackScholes",
    "fx_model",
    "cfmm_reduced_model",
    "RandomSource",
    "brownian_increments",
    "coarsen_increments",
    "PathEnsemble",
    "simulate",
    "simulate_p",
    "simulate_q",
    "theta",
    "girsanov_density",
    "money_market",
    "MomentReport",
    "moment_bound_check",
]

DEFAULT_CAP = 1e12
COND_LIMIT = 1e12


@dataclass(frozen=True)
class BoundConstants:
    """C1: |mu(s,0)| + |sigma(s,0)|; C2, C3: Lipschitz constants of mu, sigma; C_r: |r| bound."""

    C1: float
    C2: float
    C3: float
    C_r: float


class MarketModel:
    """Interface for path-dependent market coefficients.

    Subclasses implement ``mu``, ``sigma`` and ``short_rate``.  ``apply_sigma``
    and ``rate_value`` may be overridden for speed.
    """

    m: int
    bounds: BoundConstants
    theta_warn: float = 50.0

    def mu(self, t: float, hist: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sigma(self, t: float, hist: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def short_rate(self, t: float, hist: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def constant_rate(self) -> float | None:
        """The short rate if it is a constant, else None."""
        return None

    def apply_sigma(self, t: float, hist: np.ndarray, dW: np.ndarray) -> np.ndarray:
        return np.einsum("...ij,...j->...i", self.sigma(t, hist), dW)

    def q_drift(self, t: float, hist: np.ndarray) -> np.ndarray:
        return self.short_rate(t, hist)[..., None] * hist[..., -1, :]


@dataclass(frozen=True, eq=False)
class FunctionalModel(MarketModel):
    """Model built from user callables ``mu_fn(t, hist)``, ``sigma_fn(t, hist)``, ``rate_fn(t, hist)``."""

    m: int
    mu_fn: object
    sigma_fn: object
    rate_fn: object
    bounds: BoundConstants

    def mu(self, t, hist):
        return np.asarray(self.mu_fn(t, hist), dtype=float)

    def sigma(self, t, hist):
        return np.asarray(self.sigma_fn(t, hist), dtype=float)

    def short_rate(self, t, hist):
        r = np.asarray(self.rate_fn(t, hist), dtype=float)
        if np.any(np.abs(r) > self.bounds.C_r * (1 + 1e-12)):
            raise ConfigError(f"short rate exceeds declared bound C_r={self.bounds.C_r}")
        return np.broadcast_to(r, hist.shape[:-2])


@dataclass(frozen=True, eq=False)
class BlackScholes(MarketModel):
    """dX = D(X) mu dt + D(X) sigma dW with constant short rate r.

    ``sigma`` is an m x m matrix whose i-th row is the volatility vector of asset i.
    """

    mu_vec: np.ndarray
    sigma_mat: np.ndarray
    r: float
    bounds: BoundConstants = field(default=None)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu_vec, dtype=float))
        sig = np.atleast_2d(np.asarray(self.sigma_mat, dtype=float))
        if sig.shape != (mu.size, mu.size):
            raise ConfigError(f"sigma must be {mu.size}x{mu.size}, got {sig.shape}")
        if np.linalg.cond(sig) > COND_LIMIT:
            raise SingularDiffusionError("Black-Scholes volatility matrix is singular")
        object.__setattr__(self, "mu_vec", mu)
        object.__setattr__(self, "sigma_mat", sig)
        if self.bounds is None:
            row = np.linalg.norm(sig, axis=1)
            object.__setattr__(
                self, "bounds",
                BoundConstants(C1=0.0, C2=float(np.max(np.abs(mu))), C3=float(row.max()), C_r=abs(self.r)),
            )

    @classmethod
    def diagonal(cls, mu, sigma, r):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        sig = np.broadcast_to(np.atleast_1d(np.asarray(sigma, dtype=float)), mu.shape)
        return cls(mu, np.diag(sig), r)

    @property
    def m(self) -> int:
        return self.mu_vec.size

    @property
    def constant_rate(self):
        return self.r

    def mu(self, t, hist):
        return hist[..., -1, :] * self.mu_vec

    def sigma(self, t, hist):
        return hist[..., -1, :, None] * self.sigma_mat

    def short_rate(self, t, hist):
        return np.full(hist.shape[:-2], float(self.r))

    def apply_sigma(self, t, hist, dW):
        return hist[..., -1, :] * (dW @ self.sigma_mat.T)

    def q_drift(self, t, hist):
        return self.r * hist[..., -1, :]

    def exact_step(self, x: np.ndarray, dt: float, dB: np.ndarray, drift: np.ndarray) -> np.ndarray:
        """Lognormal transition under drift vector ``drift`` (exact for this model)."""
        half_var = 0.5 * np.sum(self.sigma_mat**2, axis=1)
        return x * np.exp((drift - half_var) * dt + dB @ self.sigma_mat.T)


def fx_model(r_d: float, r_f: float, b: float, v: float) -> BlackScholes:
    """Foreign-currency wealth X = U e^{r_f s} for dU = b U ds + v U dW.

    Then dX = (r_f + b) X ds + v X dW, and the domestic short rate r_d
    discounts.  The exchange rate is recovered as U = e^{-r_f s} X.
    """
    return BlackScholes.diagonal([r_f + b], [v], r_d)


def cfmm_reduced_model(r: float, sigma_mat, weights) -> tuple[BlackScholes, float, np.ndarray]:
    """One-dimensional wealth X_hat = pi_hat . X with dX_hat = r X_hat ds + |S| X_hat dB_hat.

    ``S = sum_i p_i sigma_i`` (rows of ``sigma_mat``).  Returns the model, the
    drag kappa = sum_i p_i |sigma_i|^2 / 2 - |S|^2 / 2, and the unit direction
    ``S/|S|`` that maps m-dimensional increments to dB_hat.
    """
    sig = np.atleast_2d(np.asarray(sigma_mat, dtype=float))
    p = np.asarray(weights, dtype=float)
    if p.shape != (sig.shape[0],) or np.any(p <= 0) or not math.isclose(p.sum(), 1.0, rel_tol=1e-12):
        raise ConfigError("CFMM weights must be positive and sum to 1")
    S = p @ sig
    normS = float(np.linalg.norm(S))
    kappa = 0.5 * float(p @ np.sum(sig**2, axis=1)) - 0.5 * normS**2
    model = BlackScholes.diagonal([r], [normS], r)
    return model, kappa, S / normS


class RandomSource:
    """Counter-based normal streams: stream ``i`` uses Philox keyed by (seed, i)."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)

    def generator(self, stream_id: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed + (int(stream_id) << 64)))

    def normals(self, stream_ids, shape, threads: int = 1) -> np.ndarray:
        ids = np.asarray(stream_ids, dtype=np.int64)
        out = np.empty((ids.size,) + tuple(shape))

        def fill(chunk):
            for j in chunk:
                out[j] = self.generator(ids[j]).standard_normal(shape)

        chunks = np.array_split(np.arange(ids.size), max(1, threads))
        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                list(ex.map(fill, chunks))
        else:
            fill(chunks[0])
        return out


def brownian_increments(grid: TimeGrid, n_paths: int, m: int, rng: RandomSource,
                        first_stream: int = 0, threads: int = 1) -> np.ndarray:
    """Increments of shape (n_paths, n_steps, m) with variance dt."""
    ids = np.arange(first_stream, first_stream + n_paths)
    return rng.normals(ids, (grid.n_steps, m), threads) * math.sqrt(grid.dt)


def coarsen_increments(dW: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments (same noise on a coarser grid)."""
    n = dW.shape[-2]
    if n % factor:
        raise ConfigError(f"{n} steps not divisible by {factor}")
    return dW.reshape(dW.shape[:-2] + (n // factor, factor, dW.shape[-1])).sum(axis=-2)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Paths sharing one grid and model.

    ``values``: (n_paths, n_steps + 1, m); ``increments``: (n_paths, n_steps, m)
    Brownian increments (W under P, B under Q).
    """

    grid: TimeGrid
    values: np.ndarray
    increments: np.ndarray | None
    measure: str
    model: MarketModel
    seed: int | None = None
    stream_ids: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __len__(self):
        return self.n_paths

    def path(self, i: int) -> GridPath:
        return GridPath(self.grid, self.values[i])

    def __iter__(self):
        return (self.path(i) for i in range(self.n_paths))

    def hist(self, k: int) -> np.ndarray:
        return self.values[:, : k + 1]

    def require_increments(self) -> np.ndarray:
        if self.increments is None:
            raise StateError("ensemble carries no Brownian increments")
        return self.increments

    def running_norm(self) -> np.ndarray:
        """||X||_{t_k} for every path and grid index."""
        return running_sup_norm(self.values)

    def to_csv(self, directory, max_paths: int | None = None) -> list:
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = []
        for i in range(self.n_paths if max_paths is None else min(max_paths, self.n_paths)):
            f = d / f"path_{i:06d}.csv"
            write_path_csv(self.path(i), f)
            files.append(f)
        return files


def simulate(model: MarketModel, x0, grid: TimeGrid, n_paths: int | None = None,
             rng: RandomSource | None = None, measure: str = "Q", increments=None,
             scheme: str = "euler", cap: float = DEFAULT_CAP, first_stream: int = 0,
             threads: int = 1) -> PathEnsemble:
    """Simulate paths under ``measure`` ("P" or "Q").

    Either ``increments`` (n_paths, n_steps, m) or ``rng`` and ``n_paths`` must be
    given.  ``scheme="exact"`` uses the lognormal transition and is available
    for Black-Scholes models only.
    """
    if measure not in ("P", "Q"):
        raise ConfigError(f"measure must be 'P' or 'Q', got {measure!r}")
    m = model.m
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (m,))
    if increments is None:
        if rng is None or n_paths is None:
            raise ConfigError("need increments or (rng, n_paths)")
        increments = brownian_increments(grid, n_paths, m, rng, first_stream, threads)
    increments = np.asarray(increments, dtype=float)
    n_paths = increments.shape[0]
    if increments.shape != (n_paths, grid.n_steps, m):
        raise ConfigError(f"increments shape {increments.shape} does not match grid/model")

    X = np.empty((n_paths, grid.n_steps + 1, m))
    X[:, 0] = x0
    dt = grid.dt
    if scheme == "exact":
        if not isinstance(model, BlackScholes):
            raise ConfigError("exact scheme is only available for Black-Scholes models")
        drift = model.mu_vec if measure == "P" else np.full(m, model.r)
        half_var = 0.5 * np.sum(model.sigma_mat**2, axis=1)
        log_inc = (drift - half_var) * dt + increments @ model.sigma_mat.T
        X[:, 1:] = x0 * np.exp(np.cumsum(log_inc, axis=1))
        _check_cap(X, cap)
    elif scheme == "euler":
        for k in range(grid.n_steps):
            t = grid.time(k)
            hist = X[:, : k + 1]
            drift = model.mu(t, hist) if measure == "P" else model.q_drift(t, hist)
            X[:, k + 1] = X[:, k] + drift * dt + model.apply_sigma(t, hist, increments[:, k])
            bad = ~(np.abs(X[:, k + 1]) <= cap).all(axis=-1)
            if bad.any():
                raise SimulationBlowupError(int(np.argmax(bad)), k + 1, cap)
    else:
        raise ConfigError(f"unknown scheme {scheme!r}")
    seed = rng.seed if rng is not None else None
    ids = np.arange(first_stream, first_stream + n_paths) if rng is not None else None
    return PathEnsemble(grid, X, increments, measure, model, seed, ids)


def _check_cap(X, cap):
    bad = ~(np.abs(X) <= cap).all(axis=-1)
    if bad.any():
        i, k = np.argwhere(bad)[0]
        raise SimulationBlowupError(int(i), int(k), cap)


def simulate_p(model, x0, grid, rng, n_paths, **kw) -> PathEnsemble:
    return simulate(model, x0, grid, n_paths, rng, measure="P", **kw)


def simulate_q(model, x0, grid, rng, n_paths, **kw) -> PathEnsemble:
    return simulate(model, x0, grid, n_paths, rng, measure="Q", **kw)


def theta(model: MarketModel, t: float, hist: np.ndarray) -> np.ndarray:
    """Market price of risk: solves sigma theta = mu - r X (no explicit inverse)."""
    sig = model.sigma(t, hist)
    if np.any(np.linalg.cond(sig) > COND_LIMIT):
        raise SingularDiffusionError(f"sigma singular at t={t}")
    rhs = model.mu(t, hist) - model.q_drift(t, hist)
    th = np.linalg.solve(sig, rhs[..., None])[..., 0]
    if np.any(np.linalg.norm(th, axis=-1) > model.theta_warn):
        import warnings

        warnings.warn(f"|theta| exceeds {model.theta_warn} at t={t}", RuntimeWarning, stacklevel=2)
    return th


def girsanov_density(model: MarketModel, ensemble: PathEnsemble, s: float | None = None) -> np.ndarray:
    """dQ/dP on F_s: exp(-sum theta . dW - 0.5 sum |theta|^2 dt), left-point.

    Returns one value per path at ``s``, or the full (n_paths, n_steps + 1)
    density process when ``s`` is None.
    """
    if ensemble.measure != "P":
        raise StateError("Girsanov density needs a P-ensemble")
    dW = ensemble.require_increments()
    grid = ensemble.grid
    kmax = grid.n_steps if s is None else grid.index(s)
    log_d = np.zeros((ensemble.n_paths, kmax + 1))
    for k in range(kmax):
        th = theta(model, grid.time(k), ensemble.hist(k))
        log_d[:, k + 1] = log_d[:, k] - np.sum(th * dW[:, k], axis=-1) - 0.5 * np.sum(th * th, axis=-1) * grid.dt
    dens = np.exp(log_d)
    return dens if s is None else dens[:, -1]


def short_rate_path(model: MarketModel, ensemble: PathEnsemble) -> np.ndarray:
    """r(t_k, X_{t_k}) for all paths and grid indices."""
    rc = model.constant_rate
    n = ensemble.grid.n_steps + 1
    if rc is not None:
        return np.full((ensemble.n_paths, n), float(rc))
    return np.stack([model.short_rate(ensemble.grid.time(k), ensemble.hist(k)) for k in range(n)], axis=1)


def money_market(model: MarketModel, ensemble: PathEnsemble) -> np.ndarray:
    """G(t_k) = exp(trapezoidal integral of r over [0, t_k]); shape (n_paths, n_steps + 1)."""
    r = short_rate_path(model, ensemble)
    integral = np.zeros_like(r)
    np.cumsum(0.5 * ensemble.grid.dt * (r[:, 1:] + r[:, :-1]), axis=1, out=integral[:, 1:])
    return np.exp(integral)


@dataclass(frozen=True)
class MomentReport:
    p: float
    T: float
    measured: float
    bound: float
    increments: list  # (delta, measured, bound)

    @property
    def margin(self) -> float:
        return self.bound - self.measured

    @property
    def passed(self) -> bool:
        return self.measured <= self.bound and all(m <= b for _, m, b in self.increments)


def moment_bound_check(ensemble: PathEnsemble, p: float, L6: float, L7: float, L8: float,
                       L9: float | None = None, deltas=()) -> MomentReport:
    """Compare E||X||_T^p with (L6 |x0|^p + L7) e^{L8 T} and, for each delta,
    E||X - X_0||^p_delta with L9 (1 + E||X||^p_delta) delta^{p/2}."""
    norms = ensemble.running_norm()
    T = ensemble.grid.t_end - ensemble.grid.t_start
    measured = float(np.mean(norms[:, -1] ** p))
    x0 = float(np.linalg.norm(ensemble.values[0, 0]))
    bound = (L6 * x0**p + L7) * math.exp(L8 * T)
    inc = []
    if L9 is not None:
        dev = running_sup_norm(ensemble.values - ensemble.values[:, :1])
        for d in deltas:
            k = ensemble.grid.index(ensemble.grid.t_start + d)
            meas = float(np.mean(dev[:, k] ** p))
            bnd = L9 * (1 + float(np.mean(norms[:, k] ** p))) * d ** (p / 2)
            inc.append((d, meas, bnd))
    return MomentReport(p, T, measured, bound, inc)
