"""Target functionals phi(s, gamma) with analytic pathwise derivatives.

Every target exposes ``evaluate``, ``d_s`` (horizontal), ``d_x`` (vertical
gradient) and ``d_xx`` (vertical Hessian), each taking ``(t, hist)`` where
``hist`` has shape ``(..., k + 1, m)``.  The vertical derivatives bump only the
current sample, i.e. the path perturbation ``gamma + h e_i 1_[s, inf)``.

The generator of a target under a model is

    L phi = d_s phi + 1/2 tr(sigma sigma^T d_xx phi) + r d_x phi . gamma(s).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError

__all__ = [
    "TargetFunctional",
    "MarkovTarget",
    "LinearIndex",
    "PowerIndex",
    "ProductPower",
    "DiscountedAsset",
    "FXDiscount",
    "CFMMReduced",
    "generator",
    "ppde_residual",
    "hedge_z",
    "functional_ito_check",
    "fd_vertical",
    "fd_horizontal",
]

GROWTH_SLACK = 10.0


class TargetFunctional:
    """Base class.  ``growth_order`` p and ``growth_constant`` L declare |phi| <= L (1 + ||gamma||_s^p)."""

    growth_order: float = 1
    growth_constant: float = 1.0

    def evaluate(self, t, hist):
        raise NotImplementedError

    def d_s(self, t, hist):
        raise NotImplementedError

    def d_x(self, t, hist):
        raise NotImplementedError

    def d_xx(self, t, hist):
        raise NotImplementedError

    def __call__(self, t, hist):
        return self.evaluate(t, hist)

    def check_growth(self, t, hist):
        """Raise if |phi| exceeds GROWTH_SLACK * L (1 + ||gamma||_s^p) anywhere in the batch."""
        val = np.asarray(self.evaluate(t, hist))
        norm = np.max(np.linalg.norm(hist, axis=-1), axis=-1)
        cap = GROWTH_SLACK * self.growth_constant * (1 + norm**self.growth_order)
        if not np.all(np.isfinite(val)) or np.any(np.abs(val) > cap):
            raise NumericError(f"{type(self).__name__} violates its declared growth bound at t={t}")
        return val


class MarkovTarget(TargetFunctional):
    """Targets depending on the path only through (t, gamma(t)); subclasses define the _f* methods on x."""

    def evaluate(self, t, hist):
        return self._f(t, hist[..., -1, :])

    def d_s(self, t, hist):
        return self._fs(t, hist[..., -1, :])

    def d_x(self, t, hist):
        return self._fx(t, hist[..., -1, :])

    def d_xx(self, t, hist):
        return self._fxx(t, hist[..., -1, :])


@dataclass(frozen=True, eq=False)
class LinearIndex(MarkovTarget):
    """c0 + sum_i c_i gamma_i(s)."""

    c: np.ndarray
    c0: float = 0.0
    growth_order: float = field(default=1, init=False)

    def __post_init__(self):
        object.__setattr__(self, "c", np.atleast_1d(np.asarray(self.c, dtype=float)))

    @property
    def growth_constant(self):
        return max(abs(self.c0), float(np.linalg.norm(self.c)))

    def _f(self, t, x):
        return self.c0 + x @ self.c

    def _fs(self, t, x):
        return np.zeros(x.shape[:-1])

    def _fx(self, t, x):
        return np.broadcast_to(self.c, x.shape).copy()

    def _fxx(self, t, x):
        return np.zeros(x.shape + (x.shape[-1],))


@dataclass(frozen=True, eq=False)
class PowerIndex(MarkovTarget):
    """sum_i c_i gamma_i(s)^{p_i}; growth order max p_i."""

    c: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        p = np.broadcast_to(np.atleast_1d(np.asarray(self.p, dtype=float)), c.shape).copy()
        if np.any(p < 1):
            raise ConfigError("power-index exponents must be >= 1")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "p", p)

    @property
    def growth_order(self):
        return float(self.p.max())

    @property
    def growth_constant(self):
        return float(np.abs(self.c).sum())

    def _f(self, t, x):
        return np.sum(self.c * x**self.p, axis=-1)

    def _fs(self, t, x):
        return np.zeros(x.shape[:-1])

    def _fx(self, t, x):
        return self.c * self.p * x ** (self.p - 1)

    def _fxx(self, t, x):
        diag = self.c * self.p * (self.p - 1) * x ** np.maximum(self.p - 2, 0)
        diag = np.where(self.p == 1, 0.0, diag)
        return diag[..., :, None] * np.eye(x.shape[-1])


@dataclass(frozen=True, eq=False)
class ProductPower(MarkovTarget):
    """prod_i gamma_i(s)^{p_i}; growth order sum p_i.  Needs positive states."""

    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))

    @property
    def growth_order(self):
        return float(self.p.sum())

    growth_constant = 1.0

    def _f(self, t, x):
        return np.prod(x**self.p, axis=-1)

    def _fs(self, t, x):
        return np.zeros(x.shape[:-1])

    def _fx(self, t, x):
        return self._f(t, x)[..., None] * self.p / x

    def _fxx(self, t, x):
        v = self._f(t, x)[..., None, None]
        q = self.p / x
        return v * (q[..., :, None] * q[..., None, :] - np.eye(x.shape[-1]) * (self.p / x**2)[..., None, :])


@dataclass(frozen=True, eq=False)
class DiscountedAsset(MarkovTarget):
    """e^{-a s} gamma_i(s) for a fixed asset index i."""

    rate: float
    index: int = 0
    growth_order: float = field(default=1, init=False)
    growth_constant: float = field(default=1.0, init=False)

    def _f(self, t, x):
        return np.exp(-self.rate * t) * x[..., self.index]

    def _fs(self, t, x):
        return -self.rate * self._f(t, x)

    def _fx(self, t, x):
        g = np.zeros(x.shape)
        g[..., self.index] = np.exp(-self.rate * t)
        return g

    def _fxx(self, t, x):
        return np.zeros(x.shape + (x.shape[-1],))


class FXDiscount(DiscountedAsset):
    """Exchange rate U = e^{-r_f s} X with X the foreign-currency wealth."""

    def __init__(self, r_f: float):
        super().__init__(rate=r_f, index=0)


class CFMMReduced(DiscountedAsset):
    """Deposit value e^{-kappa s} X_hat(s) expressed through the one-dimensional wealth X_hat."""

    def __init__(self, kappa: float):
        super().__init__(rate=kappa, index=0)


def _sigma_sigma_t(model, t, hist):
    sig = model.sigma(t, hist)
    return np.einsum("...ik,...jk->...ij", sig, sig)


def generator(phi: TargetFunctional, model, t: float, hist: np.ndarray) -> np.ndarray:
    a = _sigma_sigma_t(model, t, hist)
    tr = np.sum(a * phi.d_xx(t, hist), axis=(-2, -1))
    r = model.short_rate(t, hist)
    return phi.d_s(t, hist) + 0.5 * tr + r * np.sum(phi.d_x(t, hist) * hist[..., -1, :], axis=-1)


def ppde_residual(phi: TargetFunctional, f, model, t: float, hist: np.ndarray) -> np.ndarray:
    """-L phi - f(t, gamma, phi); zero where phi classically solves the path-dependent PDE."""
    return -generator(phi, model, t, hist) - f(t, hist, phi.evaluate(t, hist))


def hedge_z(phi: TargetFunctional, model, t: float, hist: np.ndarray) -> np.ndarray:
    """Row vector d_x phi . sigma."""
    return np.einsum("...i,...ij->...j", phi.d_x(t, hist), model.sigma(t, hist))


def functional_ito_check(phi: TargetFunctional, ensemble) -> np.ndarray:
    """Per-path max over the grid of the cumulative Ito residual

        phi(t_k, X) - phi(0, X) - sum d_s phi dt - sum d_x phi . dX - 1/2 sum tr(d_xx phi sigma sigma^T) dt

    with left-point sums.  Returns an array of shape (n_paths,).
    """
    grid, model, X = ensemble.grid, ensemble.model, ensemble.values
    dt = grid.dt
    cum = np.zeros(ensemble.n_paths)
    worst = np.zeros(ensemble.n_paths)
    prev = phi.evaluate(grid.time(0), X[:, :1])
    for k in range(grid.n_steps):
        t = grid.time(k)
        hist = X[:, : k + 1]
        dX = X[:, k + 1] - X[:, k]
        a = _sigma_sigma_t(model, t, hist)
        step = (
            phi.d_s(t, hist) * dt
            + np.sum(phi.d_x(t, hist) * dX, axis=-1)
            + 0.5 * np.sum(phi.d_xx(t, hist) * a, axis=(-2, -1)) * dt
        )
        nxt = phi.evaluate(grid.time(k + 1), X[:, : k + 2])
        cum += (nxt - prev) - step
        prev = nxt
        np.maximum(worst, np.abs(cum), out=worst)
    return worst


def _bump(hist, i, h):
    b = np.array(hist, dtype=float, copy=True)
    b[..., -1, i] += h
    return b


def fd_vertical(phi: TargetFunctional, t: float, hist: np.ndarray, h: float):
    """Central finite-difference gradient and Hessian under vertical bumps (testing aid)."""
    m = hist.shape[-1]
    grad = np.empty(hist.shape[:-2] + (m,))
    hess = np.empty(hist.shape[:-2] + (m, m))
    f0 = phi.evaluate(t, hist)
    for i in range(m):
        fp = phi.evaluate(t, _bump(hist, i, h))
        fm = phi.evaluate(t, _bump(hist, i, -h))
        grad[..., i] = (fp - fm) / (2 * h)
        hess[..., i, i] = (fp - 2 * f0 + fm) / h**2
        for j in range(i + 1, m):
            fpp = phi.evaluate(t, _bump(_bump(hist, i, h), j, h))
            fpm = phi.evaluate(t, _bump(_bump(hist, i, h), j, -h))
            fmp = phi.evaluate(t, _bump(_bump(hist, i, -h), j, h))
            fmm = phi.evaluate(t, _bump(_bump(hist, i, -h), j, -h))
            hess[..., i, j] = hess[..., j, i] = (fpp - fpm - fmp + fmm) / (4 * h * h)
    return grad, hess


def fd_horizontal(phi: TargetFunctional, t: float, hist: np.ndarray, h: float):
    """(phi(t + h, gamma_t) - phi(t, gamma_t)) / h with the path held flat after t (testing aid)."""
    ext = np.concatenate([hist, hist[..., -1:, :]], axis=-2)
    return (phi.evaluate(t + h, ext) - phi.evaluate(t, hist)) / h
