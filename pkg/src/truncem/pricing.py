"""Up-and-out barrier call priced on the step process of the truncated scheme.

The barrier is monitored at grid points only. For the piecewise-constant step
process this is its exact supremum over [0, T]; relative to the continuous
model it underestimates knock-outs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError
from .model import ModelParams
from .montecarlo import (
    EnsembleConfig,
    _check_failures,
    _chunk_size,
    _chunks,
    _coupled_increments,
    _is_multiple,
    _read_columns,
    _run,
    _write_rows,
    tree_sum,
)
from .scheme import Trajectory, simulate_batch
from .truncation import TruncationConfig

__all__ = ["BarrierOptionSpec", "PriceReport", "payoff_path", "payoffs", "price"]


@dataclass(frozen=True)
class BarrierOptionSpec:
    strike: float
    barrier: float
    expiry: float
    discount_rate: float = 0.0

    def __post_init__(self):
        if not self.strike > 0:
            raise ConstraintError("strike must be positive", "strike_positive")
        if not self.expiry > 0:
            raise ConstraintError("expiry must be positive", "expiry_positive")
        if not math.isfinite(self.barrier):
            raise ConstraintError("barrier must be finite", "barrier_finite")


@dataclass
class PriceReport:
    price: float
    stderr: float
    n_paths: int
    knockout_fraction: float

    HEADER = ["price", "stderr", "n_paths", "knockout_fraction"]

    def to_csv(self, dest=None) -> str:
        row = (float(self.price), float(self.stderr), int(self.n_paths), float(self.knockout_fraction))
        return _write_rows(self.HEADER, [row], dest)

    @classmethod
    def from_csv(cls, src) -> "PriceReport":
        c = _read_columns(src, cls.HEADER)
        return cls(float(c["price"][0]), float(c["stderr"][0]), int(c["n_paths"][0]),
                   float(c["knockout_fraction"][0]))


def payoffs(x_paths: np.ndarray, spec: BarrierOptionSpec):
    """Vectorised payoff over rows of grid values; returns (payoff, knocked_out)."""
    x_paths = np.atleast_2d(x_paths)
    knocked = np.max(x_paths, axis=1) >= spec.barrier
    pay = np.where(knocked, 0.0, np.maximum(x_paths[:, -1] - spec.strike, 0.0))
    return pay, knocked


def payoff_path(traj: Trajectory, spec: BarrierOptionSpec) -> float:
    """(x(T) - strike)^+ if every grid value stays strictly below the barrier, else 0."""
    if not math.isclose(traj.t_end, spec.expiry, rel_tol=1e-12):
        raise ConstraintError(f"trajectory ends at {traj.t_end:g}, option expires at {spec.expiry:g}",
                              "horizon_matches_expiry")
    pay, _ = payoffs(traj.x[None, :], spec)
    return float(pay[0])


def _price_task(args):
    model, trunc, spec, seed, start, stop, n_base, delta_base, factor = args
    dB1, dB2 = _coupled_increments(seed, start, stop, n_base, delta_base, factor)
    res = simulate_batch(dB1, dB2, trunc, model)
    ok = res.ok
    pay, knocked = payoffs(res.x[ok], spec)
    return pay, knocked, int((~ok).sum())


def price(spec: BarrierOptionSpec, ens: EnsembleConfig, model: ModelParams, trunc: TruncationConfig,
          base_delta: float | None = None, workers: int = 1) -> PriceReport:
    """Monte Carlo price of the barrier option at the truncation's step size.

    With ``base_delta`` the Brownian paths are drawn at that finer step and
    block-summed, so prices at different steps share the same paths.
    """
    if not math.isclose(ens.t_end, spec.expiry, rel_tol=1e-12):
        raise ConstraintError("ensemble horizon must equal option expiry", "horizon_matches_expiry")
    delta = trunc.delta
    n_steps = _is_multiple(spec.expiry, delta)
    if n_steps is None:
        raise ConstraintError(f"delta={delta:g} does not divide expiry", "delta_divides_expiry")
    if base_delta is None:
        factor, n_base, delta_base = 1, n_steps, delta
    else:
        factor = _is_multiple(delta, base_delta)
        if factor is None:
            raise ConstraintError(f"base_delta={base_delta:g} does not divide delta={delta:g}",
                                  "base_delta_divides_delta")
        n_base, delta_base = n_steps * factor, base_delta

    tasks = [(model, trunc, spec, ens.seed, s, e, n_base, delta_base, factor)
             for s, e in _chunks(ens.n_paths, _chunk_size(n_base))]
    results = _run(_price_task, tasks, workers)
    n_failed = sum(r[2] for r in results)
    _check_failures(n_failed, ens.n_paths)
    pay = np.concatenate([r[0] for r in results])
    knocked = np.concatenate([r[1] for r in results])
    n = len(pay)
    disc = math.exp(-spec.discount_rate * spec.expiry)
    mean = tree_sum([r[0].sum() for r in results]) / n
    se = float(np.std(pay, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return PriceReport(disc * float(mean), disc * se, n, float(knocked.mean()))
