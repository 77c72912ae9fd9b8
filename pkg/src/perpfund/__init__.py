"""Funding-rate design, pricing and replication for perpetual futures."""

from . import bsde, calibrate, config, experiments, funding, market, paths, portfolio, target

__all__ = ["bsde", "calibrate", "config", "experiments", "funding", "market", "paths", "portfolio", "target"]
__version__ = "0.1.0"
