"""Lookback option pricing by variational imaginary time evolution."""

from .market import MarketParams, MonitoringSchedule, SpatialGrid, payoff
from .oracles import McConfig, PriceCurve, expm_evolve, fd_solve, mc_price
from .pipeline import RunSpec, extract_price, fit_initial_params, run, run_m1, run_m2

__version__ = "0.1.0"

__all__ = [
    "MarketParams",
    "MonitoringSchedule",
    "SpatialGrid",
    "payoff",
    "McConfig",
    "PriceCurve",
    "expm_evolve",
    "fd_solve",
    "mc_price",
    "RunSpec",
    "extract_price",
    "fit_initial_params",
    "run",
    "run_m1",
    "run_m2",
]
