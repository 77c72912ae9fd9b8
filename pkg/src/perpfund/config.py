"""Experiment configuration: YAML/JSON files, ``PERPFUND_`` environment overrides, strict keys.

Precedence, lowest first: built-in defaults, config file, environment, CLI flags.
An environment variable ``PERPFUND_<SECTION>__<KEY>`` sets ``section.key``; its
value is parsed as YAML, so ``PERPFUND_MC__PATHS=20000`` and
``PERPFUND_MODEL__SIGMA=[0.3]`` both work.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields

import yaml

from .errors import ConfigError

ENV_PREFIX = "PERPFUND_"

__all__ = ["ENV_PREFIX", "ExperimentConfig", "load_config", "default_config"]


@dataclass
class ModelSpec:
    kind: str = "bs"  # bs | fx | cfmm
    mu: list = field(default_factory=lambda: [0.05])
    sigma: list = field(default_factory=lambda: [0.3])  # diagonal vols or a full matrix
    r: float = 0.02
    x0: list = field(default_factory=lambda: [1.0])
    r_d: float = 0.03
    r_f: float = 0.01
    b: float = 0.0
    v: float = 0.1
    weights: list = field(default_factory=lambda: [0.5, 0.5])


@dataclass
class TargetSpec:
    kind: str = "linear"  # linear | power | product | fx | cfmm
    c: list = field(default_factory=lambda: [1.0])
    c0: float = 0.0
    p: list = field(default_factory=lambda: [1.0])


@dataclass
class RateSpec:
    kind: str = "spot"  # spot | windowed
    anchor: str = "linear"  # linear | piecewise | one_sided
    ell: float = 2.0
    ell2: float = 3.0
    breakpoint: float = 1.0
    delta: float = 1 / 1095


@dataclass
class GridSpec:
    dt: float = 2e-3
    T: float = 1.0


@dataclass
class MCSpec:
    paths: int = 10000
    seed: int = 20240917


@dataclass
class SolverSpec:
    degree: int = 3
    path_features: bool = True
    window_steps: int = 20
    fp_tol: float = 1e-10
    picard_tol: float = 1e-9
    picard_max_iter: int = 40
    T_n: float | None = None  # None: from the truncation tolerance
    trunc_tol: float = 1e-2
    residual_levels: int = 3
    residual_paths: int = 4000


@dataclass
class SweepSpec:
    deltas: list = field(default_factory=lambda: [2.0**-j for j in range(6, 11)])
    paths: int = 4000
    dt: float = 1e-3
    quick: bool = False
    refined_control: bool = False


@dataclass
class CalibrateSpec:
    mode: str = "standard"  # standard | cor43
    rho: float | None = None  # default: the target's growth order


@dataclass
class ChecksSpec:
    track_tol_linear: float = 0.01
    track_tol_nonlinear: float = 0.02
    residual_slope_min: float = 0.4
    martingale_paths: int = 100000
    martingale_dt: float = 1e-2
    admissibility_cap: float = 100.0


@dataclass
class OutputSpec:
    directory: str = "perpfund-out"
    format: str = "csv"
    max_paths_csv: int = 20


@dataclass
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    target: TargetSpec = field(default_factory=TargetSpec)
    rate: RateSpec = field(default_factory=RateSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    mc: MCSpec = field(default_factory=MCSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    calibrate: CalibrateSpec = field(default_factory=CalibrateSpec)
    checks: ChecksSpec = field(default_factory=ChecksSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    allow_nonunique: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self) -> "ExperimentConfig":
        checks = [
            (self.model.kind in ("bs", "fx", "cfmm"), "model.kind must be bs, fx or cfmm"),
            (self.target.kind in ("linear", "power", "product", "fx", "cfmm"), "unknown target.kind"),
            (self.rate.kind in ("spot", "windowed"), "rate.kind must be spot or windowed"),
            (self.rate.anchor in ("linear", "piecewise", "one_sided"), "unknown rate.anchor"),
            (self.rate.ell > 0, "rate.ell must be positive"),
            (self.rate.delta > 0, "rate.delta must be positive"),
            (self.grid.dt > 0 and self.grid.T > 0, "grid.dt and grid.T must be positive"),
            (self.grid.dt < self.grid.T, "grid.dt must be below grid.T"),
            (self.mc.paths >= 2, "mc.paths must be at least 2"),
            (0 <= self.mc.seed < 2**64, "mc.seed must be an unsigned 64-bit integer"),
            (self.solver.degree >= 1, "solver.degree must be >= 1"),
            (self.solver.trunc_tol > 0, "solver.trunc_tol must be positive"),
            (self.output.format in ("csv", "json"), "output.format must be csv or json"),
            (self.calibrate.mode in ("standard", "cor43"), "calibrate.mode must be standard or cor43"),
            (self.threads >= 1, "threads must be >= 1"),
            (all(d > 0 for d in self.sweep.deltas), "sweep.deltas must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self


def _merge(obj, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    names = {f.name: f for f in fields(obj)}
    for key, val in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {where + '.' if where else ''}{key}")
        cur = getattr(obj, key)
        if hasattr(cur, "__dataclass_fields__"):
            _merge(cur, val, f"{where}.{key}" if where else key)
        else:
            setattr(obj, key, _coerce(cur, val, f"{where}.{key}" if where else key))


def _coerce(current, value, name):
    if value is None or current is None:
        return value
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if isinstance(current, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        if isinstance(current, int):
            if not float(value).is_integer():
                raise ConfigError(f"{name} must be an integer")
            return int(value)
        return float(value)
    if isinstance(current, list) and not isinstance(value, list):
        raise ConfigError(f"{name} must be a list")
    if isinstance(current, str) and not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value


def _env_overrides(environ) -> dict:
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        try:
            val = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {key}: {exc}") from exc
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return out


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def load_config(path=None, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """Resolve a configuration.  ``overrides`` (nested dict) takes precedence over everything."""
    cfg = ExperimentConfig()
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        _merge(cfg, data, "")
    _merge(cfg, _env_overrides(os.environ if environ is None else environ), "")
    if overrides:
        _merge(cfg, copy.deepcopy(overrides), "")
    return cfg.validate()
