"""Risk-neutral pricing BSDEs: residual checks, horizon truncation, a backward
least-squares regression solver and Picard iteration for the windowed rate.

Spot equation on [0, T_n] with zero terminal value:

    Y(s) = Y(T_n) + int_s^{T_n} f(u, X_u, Y(u)) du - int_s^{T_n} Z dB,
    f(s, gamma, y) = -r(s, gamma) y + Phi(s, gamma, y).

Backward step on the grid:

    Z_k = E_k[(Y_{k+1} - E_k Y_{k+1}) dB_k] / dt
    Y_k = E_k[Y_{k+1}] + f(t_k, X, Y_k) dt          (solved for Y_k)

with E_k a least-squares projection on features of the stopped path.

Windowed equation: the Picard map sends Y^{j-1} to the solution Y^j of the
equation with driver

    g(u) - ell Y^j(u) - (ell - r) (avg_{[u-delta,u]} Y^{j-1} - Y^{j-1}(u)),

and contracts in the norm E|U(0)|^2 + 2 E int e^{M u} |U(u)|^2 du,
M = 2 - 2 ell + 6 (ell - r)^2, with squared-norm ratio at most
(e^{|M| delta} - 1) / (3 |M| delta).
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import BasisError, ConfigError, DivergenceError, InfeasibleError, NumericError, StateError
from .paths import TimeGrid, window_integrals
from .target import TargetFunctional, hedge_z

log = logging.getLogger(__name__)

__all__ = [
    "BSDESolution",
    "Driver",
    "ResidualReport",
    "residual_check",
    "residual_convergence",
    "analytic_solution",
    "truncation_horizon",
    "BasisConfig",
    "SolverConfig",
    "solve_spot",
    "solve_delayed",
    "picard_contraction_bound",
    "weighted_norm_sq",
    "DeltaStudy",
    "delta_convergence_study",
    "write_solution_csv",
]


@dataclass(frozen=True, eq=False)
class BSDESolution:
    """Sampled (Y, Z): ``Y`` is (n_paths, n_steps + 1), ``Z`` is (n_paths, n_steps + 1, m).

    Z at the final grid index repeats the previous step.
    """

    ensemble: object
    Y: np.ndarray
    Z: np.ndarray
    provenance: str
    T_n: float
    T_report: float
    tags: tuple = ()
    diagnostics: dict = field(default_factory=dict)
    phi: TargetFunctional | None = None

    def __post_init__(self):
        if not (np.all(np.isfinite(self.Y)) and np.all(np.isfinite(self.Z))):
            raise NumericError("BSDE solution contains non-finite values")

    @property
    def grid(self) -> TimeGrid:
        return self.ensemble.grid

    @property
    def k_report(self) -> int:
        return self.grid.index(self.T_report, clip=True)


@dataclass(frozen=True, eq=False)
class Driver:
    """Spot-mode driver f(t, hist, y).

    ``ell`` is the recorded monotonicity constant and ``lipschitz`` bounds the
    y-Lipschitz constant.  When ``linear`` is given, f = alpha(t, hist) - beta y
    with ``linear(t, hist) -> alpha`` and ``beta = ell``.
    """

    f: object
    ell: float
    lipschitz: float
    linear: object = None
    validated: bool = True

    def __call__(self, t, hist, y):
        return self.f(t, hist, y)

    @classmethod
    def from_rate(cls, rate) -> "Driver":
        from .funding import SpotRate

        if isinstance(rate, SpotRate):
            rc = rate.model.constant_rate
            lip = rate.H.lipschitz + (0.0 if rc is not None else 2 * rate.model.bounds.C_r)
            lin = None
            if rate.H.kind == "linear":
                ell = rate.H.ell

                def alpha(t, hist, _rate=rate, _ell=ell):
                    return _ell * _rate.phi.evaluate(t, hist) - _rate.generator_values(t, hist)

                lin = alpha

            return cls(rate.driver, rate.H.ell, lip, lin, True)
        if rate.windowed:
            raise ConfigError("windowed rates are solved with solve_delayed")
        warnings.warn("custom funding rate: uniqueness claims do not apply", RuntimeWarning, stacklevel=2)

        def f(t, hist, y, _rate=rate):
            return _rate(t, hist, y)

        return cls(f, 0.0, np.inf, None, False)

    @classmethod
    def discounting(cls, r: float) -> "Driver":
        """f = -r y, i.e. a zero funding rate."""
        return cls(lambda t, hist, y: -r * np.asarray(y), r, abs(r),
                   lambda t, hist: np.zeros(hist.shape[:-2]), True)

    def check_monotone(self, ensemble, n: int = 2000, seed: int = 0) -> float:
        """Smallest sampled -(y - y')(f(y) - f(y'))/|y - y'|^2 over random (k, path, y, y')."""
        rng = np.random.default_rng(seed)
        worst = np.inf
        for k in rng.integers(0, ensemble.grid.n_steps + 1, size=8):
            hist = ensemble.hist(int(k))
            y = rng.normal(0, 5, (2, hist.shape[0]))
            t = ensemble.grid.time(int(k))
            num = -(y[0] - y[1]) * (self(t, hist, y[0]) - self(t, hist, y[1]))
            worst = min(worst, float(np.min(num / (y[0] - y[1]) ** 2)))
        return worst


def analytic_solution(phi: TargetFunctional, ensemble, T_report: float | None = None) -> BSDESolution:
    """Candidate (Y, Z) = (phi(s, X_s), d_x phi sigma)."""
    grid, model = ensemble.grid, ensemble.model
    n = grid.n_steps
    Y = np.empty((ensemble.n_paths, n + 1))
    Z = np.empty((ensemble.n_paths, n + 1, ensemble.m))
    for k in range(n + 1):
        t, hist = grid.time(k), ensemble.hist(k)
        Y[:, k] = phi.evaluate(t, hist)
        Z[:, k] = hedge_z(phi, model, t, hist)
    T = grid.t_end if T_report is None else T_report
    return BSDESolution(ensemble, Y, Z, "analytic", grid.t_end, T, phi=phi)


@dataclass(frozen=True)
class ResidualReport:
    max_cumulative: np.ndarray  # per path
    rms: float
    l2_terminal: float

    @property
    def l2_max(self) -> float:
        return float(np.sqrt(np.mean(self.max_cumulative**2)))


def residual_check(candidate: BSDESolution, driver: Driver, ensemble=None) -> ResidualReport:
    """R_k = Y_{k+1} - Y_k + f(t_k, X, Y_k) dt - Z_k . dB_k, accumulated along each path."""
    ens = candidate.ensemble if ensemble is None else ensemble
    if ens.measure != "Q":
        raise StateError("residual check needs a Q-ensemble")
    dB = ens.require_increments()
    grid = ens.grid
    Y, Z = candidate.Y, candidate.Z
    R = np.empty((ens.n_paths, grid.n_steps))
    for k in range(grid.n_steps):
        f = driver(grid.time(k), ens.hist(k), Y[:, k])
        R[:, k] = Y[:, k + 1] - Y[:, k] + f * grid.dt - np.sum(Z[:, k] * dB[:, k], axis=-1)
    cum = np.cumsum(R, axis=1)
    return ResidualReport(
        np.max(np.abs(cum), axis=1),
        float(np.sqrt(np.mean(R**2))),
        float(np.sqrt(np.mean(cum[:, -1] ** 2))),
    )


def residual_convergence(make_candidate, driver: Driver, model, x0, grid: TimeGrid, rng, n_paths: int,
                         levels: int = 4):
    """L2 cumulative residual on successively halved grids with shared noise.

    ``grid`` is the finest grid.  Returns (dts, l2_values, fitted slope of log l2 vs log dt).
    """
    from .market import brownian_increments, coarsen_increments, simulate

    dW = brownian_increments(grid, n_paths, model.m, rng)
    dts, vals = [], []
    for lev in reversed(range(levels)):
        f = 2**lev
        g = TimeGrid(grid.t_start, grid.dt * f, grid.n_steps // f)
        ens = simulate(model, x0, g, increments=coarsen_increments(dW, f) if f > 1 else dW)
        rep = residual_check(make_candidate(ens), driver, ens)
        dts.append(g.dt)
        vals.append(rep.l2_max)
    dts, vals = np.array(dts), np.array(vals)
    if np.all(vals < 1e-12):
        return dts, vals, math.inf
    slope = float(np.polyfit(np.log(dts), np.log(vals), 1)[0])
    return dts, vals, slope


def truncation_horizon(ell: float, L8: float, x0_scale: float, tol: float, C: float = 1.0, rho: float = 1.0) -> float:
    """Smallest T_n with C e^{-(ell - L8) T_n} (1 + x0_scale^rho) <= tol."""
    if not ell > L8:
        raise InfeasibleError(f"ell={ell} must exceed L8={L8}")
    if tol <= 0:
        raise ConfigError("tol must be positive")
    return max(0.0, math.log(C * (1 + x0_scale**rho) / tol) / (ell - L8))


@dataclass(frozen=True)
class BasisConfig:
    """Polynomials in the current state up to ``degree`` plus optional path features:
    the running norm ||X||_t and the trailing mean of X over ``window_steps`` steps."""

    degree: int = 3
    path_features: bool = True
    window_steps: int = 20

    def describe(self) -> str:
        extra = f" + ||X||_t + mean_{self.window_steps}(X)" if self.path_features else ""
        return f"poly(deg={self.degree}){extra}"


@dataclass(frozen=True)
class SolverConfig:
    basis: BasisConfig = BasisConfig()
    fp_tol: float = 1e-10
    fp_max_iter: int = 200
    T_report: float | None = None
    L8: float = 0.0
    picard_tol: float = 1e-9
    picard_max_iter: int = 40
    ell_threshold: float | None = None


class _Features:
    """Per-step regression design built from an ensemble."""

    def __init__(self, ensemble, basis: BasisConfig):
        self.ens = ensemble
        self.basis = basis
        m = ensemble.m
        self.powers = [c for d in range(1, basis.degree + 1)
                       for c in itertools.combinations_with_replacement(range(m), d)]
        if basis.path_features:
            self.run_norm = ensemble.running_norm()
            w = basis.window_steps
            X = ensemble.values
            cs = np.cumsum(np.concatenate([np.zeros_like(X[:, :1]), X], axis=1), axis=1)
            n = X.shape[1]
            idx = np.arange(n)
            lo = np.maximum(idx + 1 - w, 0)
            # trailing mean over at most w samples, padded with X_0 before the start
            pad = np.maximum(w - (idx + 1), 0)
            self.win_mean = ((cs[:, idx + 1] - cs[:, lo]) + pad[None, :, None] * X[:, :1]) / w
        self.core_names = ["1"] + ["*".join(f"x{i + 1}" for i in c) for c in self.powers]

    def matrix(self, k: int):
        x = self.ens.values[:, k]
        mu, sd = x.mean(axis=0), x.std(axis=0)
        sd = np.where(sd > 1e-14 * (1 + np.abs(mu)), sd, 1.0)
        z = (x - mu) / sd
        cols = [np.ones(x.shape[0])] + [np.prod(z[:, list(c)], axis=1) for c in self.powers]
        n_core = len(cols)
        names = list(self.core_names)
        if self.basis.path_features:
            for arr, nm in ((self.run_norm[:, k], "||X||_t"),):
                cols.append(arr)
                names.append(nm)
            for i in range(self.ens.m):
                cols.append(self.win_mean[:, k, i])
                names.append(f"mean(x{i + 1})")
        A = np.column_stack(cols)
        # standardise non-intercept columns; drop constant ones
        c_mu = A[:, 1:].mean(axis=0)
        c_sd = A[:, 1:].std(axis=0)
        keep = np.concatenate([[True], c_sd > 1e-12 * (1 + np.abs(c_mu))])
        A[:, 1:] = (A[:, 1:] - c_mu) / np.where(c_sd > 0, c_sd, 1.0)
        return A[:, keep], [n for n, kp in zip(names, keep) if kp], n_core


class _Projector:
    """Orthonormal basis for the design columns.  Core (polynomial) columns must be
    independent; path features are kept only where they add a new direction."""

    def __init__(self, A, names, n_core, rcond=1e-10):
        core = [j for j in range(A.shape[1]) if j < n_core]
        extra = [j for j in range(A.shape[1]) if j >= n_core]
        Qc, Rc = linalg.qr(A[:, core], mode="economic")
        d = np.abs(np.diag(Rc))
        bad = [names[core[j]] for j in range(len(core)) if d[j] <= rcond * max(d[0], 1.0)]
        if bad:
            raise BasisError(f"rank-deficient design for basis {names}; dependent: {bad}")
        Q, cond, self.dropped = Qc, float(d.max() / d.min()), []
        if extra:
            E = A[:, extra]
            E = E - Qc @ (Qc.T @ E)
            Qe, Re, piv = linalg.qr(E, mode="economic", pivoting=True)
            de = np.abs(np.diag(Re))
            scale = np.sqrt(A.shape[0])
            rank = int(np.sum(de > 1e-8 * scale))
            self.dropped = [names[extra[j]] for j in piv[rank:]]
            Q = np.hstack([Qc, Qe[:, :rank]])
            if rank:
                cond = max(cond, float(scale / de[rank - 1]))
        self.Q = Q
        self.cond = cond

    def __call__(self, y):
        return self.Q @ (self.Q.T @ y)


def _implicit(C, alpha_fn, f, t, hist, dt, ell, cfg: SolverConfig, lipschitz: float):
    if alpha_fn is not None:
        return (C + alpha_fn * dt) / (1.0 + ell * dt)
    if not dt * lipschitz < 1:
        raise NumericError(f"fixed point needs dt * Lip(f) < 1 (dt={dt}, Lip={lipschitz})")
    y = C.copy()
    for _ in range(cfg.fp_max_iter):
        y_new = C + f(t, hist, y) * dt
        if np.max(np.abs(y_new - y)) <= cfg.fp_tol * (1 + np.max(np.abs(y_new))):
            return y_new
        y = y_new
    # no fixed point (an anchor with a jump): bisect the increasing map y - C - f(y) dt
    return _bisect_implicit(C, f, t, hist, dt, cfg.fp_tol)


def _bisect_implicit(C, f, t, hist, dt, tol, max_iter: int = 200):
    def g(y):
        return y - C - f(t, hist, y) * dt

    w = 1.0 + np.abs(C)
    lo, hi = C - w, C + w
    for _ in range(60):
        bad_lo, bad_hi = g(lo) > 0, g(hi) < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        w = 2 * w
        lo, hi = np.where(bad_lo, C - w, lo), np.where(bad_hi, C + w, hi)
    else:
        raise NumericError("implicit step: cannot bracket the solution")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        up = g(mid) > 0
        hi, lo = np.where(up, mid, hi), np.where(up, lo, mid)
        if np.max(hi - lo) <= tol * (1 + np.max(np.abs(mid))):
            break
    else:
        raise NumericError("implicit step: bisection did not converge")
    return 0.5 * (lo + hi)


def _backward_sweep(ensemble, cfg: SolverConfig, step_driver, diag: dict):
    """Generic backward regression.  ``step_driver(k, C, hist)`` returns Y_k given E_k[Y_{k+1}] = C."""
    grid = ensemble.grid
    dB = ensemble.require_increments()
    n, N, m = grid.n_steps, ensemble.n_paths, ensemble.m
    feats = _Features(ensemble, cfg.basis)
    Y = np.empty((N, n + 1))
    Z = np.empty((N, n + 1, m))
    Y[:, n] = 0.0
    conds = np.empty(n)
    for k in range(n - 1, -1, -1):
        A, names, n_core = feats.matrix(k)
        P = _Projector(A, names, n_core)
        conds[k] = P.cond
        C = P(Y[:, k + 1])
        Z[:, k] = P((Y[:, k + 1] - C)[:, None] * dB[:, k] / grid.dt)
        Y[:, k] = step_driver(k, C, ensemble.hist(k))
    Z[:, n] = Z[:, n - 1]
    diag["max_condition"] = float(np.max(conds))
    log.debug("regression sweep: max condition number %.3g", diag["max_condition"])
    return Y, Z


def _report_time(ensemble, cfg: SolverConfig, ell: float) -> float:
    if cfg.T_report is not None:
        if cfg.T_report > ensemble.grid.t_end:
            raise ConfigError("T_report beyond the truncation horizon")
        return cfg.T_report
    return max(ensemble.grid.t_start, ensemble.grid.t_end - 2.0 / (ell - cfg.L8))


def solve_spot(driver: Driver, ensemble, config: SolverConfig = SolverConfig()) -> BSDESolution:
    """Backward regression solve on the ensemble's grid; T_n is the grid end."""
    if ensemble.measure != "Q":
        raise StateError("solver needs a Q-ensemble")
    tags = []
    if not driver.validated:
        tags.append("unvalidated rate")
    if config.ell_threshold is not None and not driver.ell > config.ell_threshold:
        tags.append("uniqueness not guaranteed")
        warnings.warn("ell below threshold: uniqueness not guaranteed", RuntimeWarning, stacklevel=2)
    grid = ensemble.grid

    def step(k, C, hist):
        t = grid.time(k)
        alpha = driver.linear(t, hist) if driver.linear is not None else None
        return _implicit(C, alpha, driver.f, t, hist, grid.dt, driver.ell, config, driver.lipschitz)

    diag = {}
    Y, Z = _backward_sweep(ensemble, config, step, diag)
    return BSDESolution(ensemble, Y, Z, "regression", grid.t_end,
                        _report_time(ensemble, config, max(driver.ell, config.L8 + 1e-12)), tuple(tags), diag)


def picard_contraction_bound(ell: float, r: float, delta: float) -> float:
    M = abs(2 - 2 * ell + 6 * (ell - r) ** 2) * delta
    return 1.0 / 3.0 if M == 0 else math.expm1(M) / (3 * M)


def weighted_norm_sq(U: np.ndarray, grid: TimeGrid, M: float) -> float:
    """E|U(0)|^2 + 2 E int e^{M u} |U(u)|^2 du, scaled by e^{-M_+ T} to avoid overflow.

    The scaling is common to every call with the same (grid, M), so ratios are exact.
    """
    t = grid.times
    shift = max(M, 0.0) * t[-1]
    w = np.exp(M * t - shift)
    u2 = np.mean(U**2, axis=0)
    integral = np.sum(0.5 * grid.dt * (w[1:] * u2[1:] + w[:-1] * u2[:-1]))
    return float(math.exp(-shift) * u2[0] + 2.0 * integral)


def solve_delayed(g, ell: float, r: float, delta: float, ensemble, config: SolverConfig = SolverConfig(),
                  Y0: np.ndarray | None = None) -> BSDESolution:
    """Picard iteration over the trailing-window term.

    ``g`` is the window-averaged Y-independent part of the rate, sampled as
    (n_paths, n_steps + 1).  Diagnostics record the weighted-norm differences,
    their squared ratios and the analytic contraction bound.
    """
    if ensemble.measure != "Q":
        raise StateError("solver needs a Q-ensemble")
    if not delta > 0:
        raise ConfigError("delta must be positive")
    grid = ensemble.grid
    g = np.asarray(g, dtype=float)
    if g.shape != (ensemble.n_paths, grid.n_steps + 1):
        raise ConfigError("g must be sampled on the ensemble grid")
    M = 2 - 2 * ell + 6 * (ell - r) ** 2
    bound = picard_contraction_bound(ell, r, delta)
    dt = grid.dt
    prev = np.zeros_like(g) if Y0 is None else np.asarray(Y0, dtype=float)
    prev_Z = None
    diffs, ratios = [], []
    diag = {"M": M, "contraction_bound": bound}
    for it in range(config.picard_max_iter):
        D = (ell - r) * (window_integrals(prev, grid, delta) / delta - prev)

        def step(k, C, hist, _D=D):
            return (C + dt * (g[:, k] - _D[:, k])) / (1.0 + ell * dt)

        Y, Z = _backward_sweep(ensemble, config, step, diag)
        dn = math.sqrt(weighted_norm_sq(Y - prev, grid, M))
        diffs.append(dn)
        if len(diffs) >= 2 and diffs[-2] > 0:
            ratios.append((diffs[-1] / diffs[-2]) ** 2)
        log.info("picard iteration %d: weighted-norm delta %.3e", it + 1, dn)
        scale = math.sqrt(weighted_norm_sq(Y, grid, M))
        prev, prev_Z = Y, Z
        if dn <= config.picard_tol * max(scale, 1e-300):
            break
        if len(ratios) >= 3 and all(q >= 1 for q in ratios[-3:]):
            raise DivergenceError("Picard iteration is not contracting", ratios)
    else:
        raise DivergenceError(f"no convergence after {config.picard_max_iter} Picard iterations", ratios)
    diag.update({"picard_deltas": diffs, "picard_sq_ratios": ratios, "iterations": len(diffs)})
    return BSDESolution(ensemble, prev, prev_Z, "regression", grid.t_end,
                        _report_time(ensemble, config, ell), (), diag)


@dataclass
class DeltaStudy:
    rows: list  # dicts per delta
    slope_y: float
    slope_z: float
    floor: dict

    def table(self):
        return self.rows


def _fit_slope(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = y > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def delta_convergence_study(phi: TargetFunctional, model, ell: float, deltas, ensemble,
                            config: SolverConfig = SolverConfig(), refined_ensemble=None,
                            T: float | None = None) -> DeltaStudy:
    """E||Y^delta - Y||_T and E int_0^T |Z^delta - Z|^2 for each delta.

    Y, Z is the regression solution of the spot equation on the same paths
    and basis, so regression bias common to both cancels.  Errors against the
    analytic (phi, d_x phi sigma) are reported alongside.  When
    ``refined_ensemble`` (same noise, finer grid) is given, the smallest delta
    is re-solved there to expose the discretisation floor.
    """
    from .funding import g_series, make_const_prop_rate

    r = float(model.constant_rate)
    grid = ensemble.grid
    T = config.T_report if T is None else T
    kT = grid.index(T)
    spot = solve_spot(Driver.from_rate(make_const_prop_rate(ell, phi, model)), ensemble, config)
    exact = analytic_solution(phi, ensemble)
    rows = []
    for d in deltas:
        g = g_series(ell, phi, model, d, ensemble)
        sol = solve_delayed(g, ell, r, d, ensemble, config)
        ey = np.max(np.abs(sol.Y[:, : kT + 1] - spot.Y[:, : kT + 1]), axis=1)
        ey_exact = np.max(np.abs(sol.Y[:, : kT + 1] - exact.Y[:, : kT + 1]), axis=1)
        dz = np.sum((sol.Z[:, :kT] - spot.Z[:, :kT]) ** 2, axis=-1)
        ez = float(np.mean(np.sum(dz, axis=1) * grid.dt))
        rows.append({
            "delta": d,
            "E_sup_dY": float(np.mean(ey)),
            "E_sup_dY_vs_analytic": float(np.mean(ey_exact)),
            "pathwise_sup_dY": ey,
            "E_int_dZ2": ez,
            "picard_iterations": sol.diagnostics["iterations"],
            "picard_max_sq_ratio": max(sol.diagnostics["picard_sq_ratios"], default=0.0),
            "contraction_bound": sol.diagnostics["contraction_bound"],
        })
    floor = {"spot_vs_analytic_E_sup": float(np.mean(np.max(np.abs(spot.Y[:, : kT + 1] - exact.Y[:, : kT + 1]), axis=1)))}
    if refined_ensemble is not None:
        rg = refined_ensemble.grid
        kR = rg.index(T)
        rspot = solve_spot(Driver.from_rate(make_const_prop_rate(ell, phi, model)), refined_ensemble, config)
        dmin = min(deltas)
        rsol = solve_delayed(g_series(ell, phi, model, dmin, refined_ensemble), ell, r, dmin, refined_ensemble, config)
        floor["refined_dt"] = rg.dt
        floor["refined_E_sup_dY_at_min_delta"] = float(
            np.mean(np.max(np.abs(rsol.Y[:, : kR + 1] - rspot.Y[:, : kR + 1]), axis=1)))
    return DeltaStudy(
        rows,
        _fit_slope([r_["delta"] for r_ in rows], [r_["E_sup_dY"] for r_ in rows]),
        _fit_slope([r_["delta"] for r_ in rows], [r_["E_int_dZ2"] for r_ in rows]),
        floor,
    )


def write_solution_csv(solution: BSDESolution, file, max_paths: int | None = None) -> None:
    grid = solution.grid
    n_paths = solution.Y.shape[0] if max_paths is None else min(max_paths, solution.Y.shape[0])
    m = solution.Z.shape[-1]
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "path_id", "Y"] + [f"Z_{i + 1}" for i in range(m)])
        times = grid.times
        for i in range(n_paths):
            for k, t in enumerate(times):
                w.writerow([repr(float(t)), i, repr(float(solution.Y[i, k]))]
                           + [repr(float(z)) for z in solution.Z[i, k]])
