"""Grid paths, stopped paths, the path seminorm and trailing-window integrals.

A continuous path gamma: [0, inf) -> R^m is represented by its samples on a
uniform grid ``t_k = t_start + k * dt``.  Between samples the path is the
piecewise-linear interpolant and after the last sample it is held constant,
so that stopping at s reproduces ``gamma(s ^ .)``.

Norms on R^m are Euclidean throughout.  Arrays carry time on axis -2 and the
asset index on axis -1, i.e. a single path is ``(n_steps + 1, m)`` and an
ensemble is ``(n_paths, n_steps + 1, m)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, RangeError

__all__ = [
    "TimeGrid",
    "GridPath",
    "StoppedPathView",
    "stop",
    "sup_norm",
    "running_sup_norm",
    "pseudometric",
    "window_integral",
    "window_integrals",
    "write_path_csv",
    "read_path_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be an integer >= 1, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_horizon(cls, T: float, dt: float, t_start: float = 0.0) -> "TimeGrid":
        n = int(round((T - t_start) / dt))
        return cls(t_start, dt, max(n, 1))

    @property
    def times(self) -> np.ndarray:
        # index-derived, never accumulated
        return self.t_start + np.arange(self.n_steps + 1) * self.dt

    @property
    def t_end(self) -> float:
        return self.time(self.n_steps)

    def time(self, k: int) -> float:
        return self.t_start + k * self.dt

    def index(self, s: float, clip: bool = False) -> int:
        """Nearest grid index to time ``s``.

        Times outside ``[t_start, t_end]`` raise ``RangeError`` unless ``clip``.
        """
        k = int(np.floor((s - self.t_start) / self.dt + 0.5))
        if clip:
            return min(max(k, 0), self.n_steps)
        if k < 0 or k > self.n_steps:
            raise RangeError(f"time {s} outside grid [{self.t_start}, {self.t_end}]")
        return k

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t_start, self.dt / factor, self.n_steps * factor)


def _as_values(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return v


@dataclass(frozen=True)
class GridPath:
    """Samples of an R^m path; ``values`` has shape ``(n_steps + 1, m)``."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _as_values(self.values).copy()
        if v.ndim != 2 or v.shape[0] != self.grid.n_steps + 1:
            raise ConfigError(
                f"values must have shape ({self.grid.n_steps + 1}, m), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigError("path samples must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __call__(self, u: float) -> np.ndarray:
        return self.values[self.grid.index(u, clip=True)]

    def stop(self, s: float) -> "StoppedPathView":
        return stop(self, s)


@dataclass(frozen=True)
class StoppedPathView:
    """The path ``base`` frozen at its value at ``stop_time`` (snapped to the grid)."""

    base: GridPath
    stop_index: int

    @property
    def grid(self) -> TimeGrid:
        return self.base.grid

    @property
    def stop_time(self) -> float:
        return self.base.grid.time(self.stop_index)

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def values(self) -> np.ndarray:
        v = self.base.values.copy()
        v[self.stop_index + 1 :] = v[self.stop_index]
        v.setflags(write=False)
        return v

    @property
    def history(self) -> np.ndarray:
        """Samples up to and including the stop time (a view, no copy)."""
        return self.base.values[: self.stop_index + 1]

    def __call__(self, u: float) -> np.ndarray:
        k = min(self.base.grid.index(u, clip=True), self.stop_index)
        return self.base.values[k]


def stop(path, s: float) -> StoppedPathView:
    """Stop ``path`` at the grid point nearest to ``s``."""
    if isinstance(path, StoppedPathView):
        k = path.grid.index(s)
        return StoppedPathView(path.base, min(k, path.stop_index))
    return StoppedPathView(path, path.grid.index(s))


def _samples_and_grid(path):
    if isinstance(path, (GridPath, StoppedPathView)):
        return path.values, path.grid
    raise TypeError("expected GridPath or StoppedPathView")


def sup_norm(path, T: float) -> float:
    """max_{t_k <= T} |gamma(t_k)|; T past the last sample uses constant extension."""
    values, grid = _samples_and_grid(path)
    if T < grid.t_start:
        raise RangeError(f"T={T} precedes grid start {grid.t_start}")
    k = grid.index(T, clip=True)
    return float(np.max(np.linalg.norm(values[: k + 1], axis=-1)))


def running_sup_norm(values: np.ndarray) -> np.ndarray:
    """Running maximum of |x(t_k)| along axis -2; works for single paths and ensembles."""
    return np.maximum.accumulate(np.linalg.norm(values, axis=-1), axis=-1)


def pseudometric(s: float, gamma, s_prime: float, gamma_prime) -> float:
    """|s - s'| + sup_{r <= s v s'} |gamma(r ^ s) - gamma'(r ^ s')|, on the common grid."""
    g1 = stop(gamma, s)
    g2 = stop(gamma_prime, s_prime)
    if g1.grid != g2.grid:
        raise ConfigError("paths must share a time grid")
    k = max(g1.stop_index, g2.stop_index)
    diff = g1.values[: k + 1] - g2.values[: k + 1]
    return abs(g1.stop_time - g2.stop_time) + float(np.max(np.linalg.norm(diff, axis=-1)))


def _cumulative_trapezoid(f: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(f)
    np.cumsum(0.5 * dt * (f[..., 1:] + f[..., :-1]), axis=-1, out=out[..., 1:])
    return out


def _antiderivative(f: np.ndarray, cum: np.ndarray, dt: float, tau: np.ndarray) -> np.ndarray:
    """Integral from t_start to t_start + tau of the piecewise-linear interpolant of f.

    ``tau`` is measured in time from the grid start and may be negative
    (constant extension by f[..., 0]).
    """
    n = f.shape[-1] - 1
    tau = np.asarray(tau, dtype=float)
    neg = tau < 0
    j = np.clip(np.floor(tau / dt).astype(int), 0, max(n - 1, 0))
    h = tau - j * dt
    fj = np.take(f, j, axis=-1)
    slope = (np.take(f, np.minimum(j + 1, n), axis=-1) - fj) / dt
    val = np.take(cum, j, axis=-1) + h * fj + 0.5 * h * h * slope
    return np.where(neg, tau * f[..., :1], val)


def window_integral(f, grid: TimeGrid, s: float, delta: float) -> np.ndarray:
    """Trapezoidal integral of the sampled f over [s - delta, s].

    ``f`` holds samples on ``grid`` along its last axis.  Samples after ``s``
    are never read.  Before ``t_start`` f is extended by its first sample.
    """
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    f = np.asarray(f, dtype=float)
    k = grid.index(s)
    fk = f[..., : k + 1]
    if k == 0:
        return delta * fk[..., 0]
    cum = _cumulative_trapezoid(fk, grid.dt)
    t_hi = k * grid.dt
    return cum[..., k] - _antiderivative(fk, cum, grid.dt, np.asarray(t_hi - delta))


def window_integrals(f, grid: TimeGrid, delta: float) -> np.ndarray:
    """window_integral evaluated at every grid time at once; same shape as f.

    Each output k depends on samples 0..k only, since the interpolant on the
    segment containing t_k - delta uses samples at or before t_k.
    """
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    f = np.asarray(f, dtype=float)
    n = f.shape[-1] - 1
    cum = _cumulative_trapezoid(f, grid.dt)
    tau = np.arange(n + 1) * grid.dt - delta
    lower = _antiderivative(f, cum, grid.dt, tau)
    return cum - lower


def write_path_csv(path: GridPath, file) -> None:
    """Write ``t,x1..xm`` rows using shortest round-trip float formatting."""
    header = ["t"] + [f"x{i + 1}" for i in range(path.m)]
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, row in zip(path.times, path.values):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def read_path_csv(file) -> GridPath:
    with open(Path(file), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t" or len(body) < 2:
        raise ConfigError(f"{file}: expected header 't,x1,...' and at least two rows")
    data = np.array([[float(x) for x in r] for r in body])
    t = data[:, 0]
    n = len(t) - 1
    dt = (t[-1] - t[0]) / n
    grid = TimeGrid(float(t[0]), float(dt), n)
    if not np.allclose(grid.times, t, rtol=0, atol=1e-9 * max(1.0, abs(t[-1]))):
        raise ConfigError(f"{file}: times are not on a uniform grid")
    return GridPath(grid, data[:, 1:])
