"""Gauss-Newton and Levenberg-Marquardt training dynamics of shallow tanh networks."""

from .diagnostics import RateBound, SpectralReport, spectral_report
from .dynamics import FlowConfig, QuadraticLoss, TrajectoryRecord, run_trajectory
from .network import Dataset, NetworkParams, bind, init_params, jacobian

__version__ = "0.1.0"

__all__ = [
    "Dataset", "FlowConfig", "NetworkParams", "QuadraticLoss", "RateBound", "SpectralReport",
    "TrajectoryRecord", "bind", "init_params", "jacobian", "run_trajectory", "spectral_report",
]
