"""Exception types shared across the package.

The CLI maps ``ConfigError`` to exit code 2 and ``NumericError`` to exit code 3.
"""


class PerpfundError(Exception):
    """Base class for all package errors."""


class ConfigError(PerpfundError, ValueError):
    """Invalid configuration or argument."""


class RangeError(ConfigError):
    """A requested time lies outside the path's grid."""


class StateError(PerpfundError, RuntimeError):
    """An object is missing data needed by the operation."""


class KindMismatchError(ConfigError):
    """Arguments do not match the kind of the rate or solver."""


class NumericError(PerpfundError, ArithmeticError):
    """A numerical procedure failed."""


class SimulationBlowupError(NumericError):
    def __init__(self, path_index: int, step: int, cap: float):
        self.path_index = path_index
        self.step = step
        super().__init__(f"path {path_index} exceeded |X| cap {cap:g} at step {step}")


class SingularDiffusionError(NumericError):
    """The diffusion matrix is singular or badly conditioned."""


class BasisError(NumericError):
    """Regression design matrix is rank deficient."""


class DivergenceError(NumericError):
    def __init__(self, message: str, ratios=()):
        self.ratios = list(ratios)
        super().__init__(f"{message}; ratio history {self.ratios}")


class InfeasibleError(NumericError):
    """No constants satisfy the required side conditions."""
