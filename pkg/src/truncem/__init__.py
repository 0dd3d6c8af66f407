"""Truncated Euler-Maruyama simulation of a mean-reverting asset with CEV-type stochastic variance."""

from .errors import (
    ConfigError,
    ConstraintError,
    DomainError,
    NonFiniteError,
    SimulationError,
    TruncEMError,
)
from .model import AssumptionReport, ModelParams, validate
from .montecarlo import (
    EnsembleConfig,
    GapReport,
    MomentReport,
    StrongErrorReport,
    estimate_moments,
    estimate_moments_multi,
    estimate_strong_error,
    interpolation_gap_probe,
)
from .pricing import BarrierOptionSpec, PriceReport, payoff_path, price
from .scheme import Driver, PathGrid, RngStreamKey, Trajectory, simulate_batch, simulate_path, step
from .truncation import NuFunction, TruncationConfig, build_nu, make_truncation

__version__ = "0.1.0"
