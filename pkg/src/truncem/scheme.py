"""Discrete truncated EM recursion, Brownian increments and path containers.

Increments come from counter-based Philox normals addressed by (seed, path
index, driver, step), so a path is reproducible on its own regardless of how
paths are batched. Values
are rounded onto the lattice 2**-36; block sums of lattice values are exact in
double precision, which makes coarsening order-independent and bit-exact.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from . import rng
from .errors import ConstraintError, SimulationError
from .model import ModelParams
from .truncation import (
    TruncationConfig,
    trunc_diffusion_asset,
    trunc_diffusion_var,
    trunc_drift_asset,
    trunc_drift_var,
)

__all__ = [
    "Driver",
    "RngStreamKey",
    "PathGrid",
    "Trajectory",
    "BatchResult",
    "generate_increments",
    "generate_normals",
    "batch_increments",
    "batch_normals",
    "coarsen",
    "grid_steps",
    "step",
    "simulate_path",
    "simulate_batch",
    "midpoint_gap",
]

LATTICE_BITS = 36


class Driver(enum.IntEnum):
    B1 = 0
    B2 = 1
    # independent normals used to place a Brownian-bridge point inside each B1 step
    BRIDGE1 = 2


@dataclass(frozen=True)
class RngStreamKey:
    seed: int
    path_index: int
    driver: Driver

    def __post_init__(self):
        if not 0 <= int(self.seed) <= rng.MAX_SEED:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.path_index < 0:
            raise ValueError("path_index must be non-negative")


def batch_normals(seed: int, start: int, stop: int, driver: Driver, n: int) -> np.ndarray:
    """Standard normals for paths start..stop-1, shape (stop - start, n)."""
    return rng.normals(seed, start, stop - start, int(driver), n)


def batch_increments(seed: int, start: int, stop: int, driver: Driver, n_steps: int,
                     delta: float) -> np.ndarray:
    """Lattice-rounded Normal(0, delta) increments for paths start..stop-1."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not delta > 0:
        raise ValueError("delta must be positive")
    return rng.normals(seed, start, stop - start, int(driver), n_steps,
                       scale=math.sqrt(delta), quantum=2.0 ** -LATTICE_BITS)


def generate_normals(key: RngStreamKey, n: int) -> np.ndarray:
    """n standard normals from the stream named by ``key``."""
    return batch_normals(key.seed, key.path_index, key.path_index + 1, key.driver, n)[0]


def generate_increments(key: RngStreamKey, n_steps: int, delta: float) -> np.ndarray:
    """Brownian increments with Normal(0, delta) marginals, rounded to the 2**-36 lattice."""
    return batch_increments(key.seed, key.path_index, key.path_index + 1, key.driver,
                            n_steps, delta)[0]


def coarsen(fine: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments along the last axis.

    Exact (and so independent of summation order) for lattice increments.
    """
    fine = np.asarray(fine, dtype=float)
    factor = int(factor)
    n = fine.shape[-1]
    if factor < 1 or n % factor:
        raise ConstraintError(f"factor {factor} does not divide length {n}", "coarsen_divisibility")
    if factor == 1:
        return fine.copy()
    return fine.reshape(fine.shape[:-1] + (n // factor, factor)).sum(axis=-1)


def grid_steps(t_end: float, delta: float) -> tuple[int, float]:
    """Round ``t_end / delta`` to an integer step count and return the adjusted step."""
    if not (t_end > 0 and delta > 0):
        raise ValueError("t_end and delta must be positive")
    n = max(1, int(round(t_end / delta)))
    return n, t_end / n


@dataclass(frozen=True)
class PathGrid:
    t_end: float
    n_steps: int
    delta: float
    dB1: np.ndarray
    dB2: np.ndarray

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.n_steps and not math.isclose(self.n_steps * self.delta, self.t_end, rel_tol=1e-12):
            raise ConstraintError("n_steps * delta must equal t_end", "grid_integral")
        if len(self.dB1) != self.n_steps or len(self.dB2) != self.n_steps:
            raise ValueError("increment arrays must have n_steps entries")

    @classmethod
    def sample(cls, seed: int, path_index: int, t_end: float, n_steps: int) -> "PathGrid":
        if n_steps == 0:
            return cls(t_end, 0, 0.0, np.empty(0), np.empty(0))
        delta = t_end / n_steps
        dB1 = generate_increments(RngStreamKey(seed, path_index, Driver.B1), n_steps, delta)
        dB2 = generate_increments(RngStreamKey(seed, path_index, Driver.B2), n_steps, delta)
        return cls(t_end, n_steps, delta, dB1, dB2)


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    trunc_hits_x: int = 0
    trunc_hits_y: int = 0
    neg_excursions_y: int = 0

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "y"])
        for row in zip(self.times, self.x, self.y):
            w.writerow([_fmt(v) for v in row])
        text = buf.getvalue()
        if dest is not None:
            Path(dest).write_text(text, encoding="utf-8", newline="")
        return text

    @classmethod
    def from_csv(cls, src) -> "Trajectory":
        cols = _read_columns(src, ["t", "x", "y"])
        return cls(cols["t"], cols["x"], cols["y"])


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _read_columns(src, header):
    text = src if isinstance(src, str) and "\n" in src else Path(src).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if rows[0] != header:
        raise ValueError(f"expected header {header}, got {rows[0]}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    return {name: data[:, i].copy() for i, name in enumerate(header)}


def step(x_k, y_k, dB1_k, dB2_k, cfg: TruncationConfig, p: ModelParams, k=None):
    """One truncated EM step. Both updates read (x_k, y_k) before either is committed."""
    d = cfg.delta
    y_next = y_k + trunc_drift_var(y_k, cfg, p) * d + trunc_diffusion_var(y_k, cfg, p) * dB2_k
    x_next = (x_k + trunc_drift_asset(x_k, cfg, p) * d
              + np.sqrt(np.abs(y_k)) * trunc_diffusion_asset(x_k, cfg, p) * dB1_k)
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(y_next))):
        raise SimulationError(f"non-finite state after step {k}", step=k)
    return x_next, y_next


@dataclass
class BatchResult:
    """Outputs of simulate_batch. Path arrays have shape (n_paths, n_steps + 1)."""

    x: np.ndarray
    y: np.ndarray
    trunc_hits_x: np.ndarray
    trunc_hits_y: np.ndarray
    neg_excursions_y: np.ndarray
    failed_step: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.failed_step < 0


@nb.njit(cache=True, inline="always")
def _qpow(x, e, n4):
    """x**e for x >= 0. When 4e is a small integer ``n4`` (else -1) use products and
    square roots, which agree with pow to a few ulp at a fraction of the cost."""
    if n4 < 0:
        return x ** e
    v = 1.0
    for _ in range(n4 // 4):
        v *= x
    rem = n4 % 4
    if rem:
        s = math.sqrt(x)
        if rem == 2:
            v *= s
        else:
            q = math.sqrt(s)
            v *= q if rem == 1 else s * q
    return v


def _quarter_code(e: float) -> int:
    n4 = 4.0 * e
    return int(n4) if n4 == int(n4) and 0 <= n4 <= 40 else -1


@nb.njit(cache=True)
def _simulate_kernel(dB1, dB2, x0, y0, a1, m1, s1, rho, th, a2, m2, s2, r, ph, d, cap, codes,
                     xs, ys, hits_x, hits_y, neg_y, failed, worst):
    n_paths, n_steps = dB1.shape
    for i in range(n_paths):
        x, y = x0, y0
        xs[i, 0], ys[i, 0] = x, y
        w = 0.0
        for k in range(n_steps):
            if x < 0.0:
                f1, g1 = a1 * m1, 0.0
            else:
                xc = min(x, cap)
                f1 = a1 * (m1 - _qpow(xc, rho, codes[0]))
                g1 = s1 * _qpow(xc, th, codes[1])
                if x > cap:
                    hits_x[i] += 1
            if y < 0.0:
                f2, g2 = a2 * m2, 0.0
                neg_y[i] += 1
            else:
                yc = min(y, cap)
                f2 = a2 * (m2 - _qpow(yc, r, codes[2]))
                g2 = s2 * _qpow(yc, ph, codes[3])
                if y > cap:
                    hits_y[i] += 1
            w = max(w, abs(f1), g1, abs(f2), g2)
            y_new = y + f2 * d + g2 * dB2[i, k]
            x_new = x + f1 * d + math.sqrt(abs(y)) * g1 * dB1[i, k]
            if not (math.isfinite(x_new) and math.isfinite(y_new)):
                failed[i] = k
                xs[i, k + 1:] = np.nan
                ys[i, k + 1:] = np.nan
                break
            x, y = x_new, y_new
            xs[i, k + 1], ys[i, k + 1] = x, y
        worst[i] = w


def simulate_batch(dB1: np.ndarray, dB2: np.ndarray, cfg: TruncationConfig, p: ModelParams,
                   check_bound: bool = False) -> BatchResult:
    """Advance many paths at once from the model's initial data.

    ``dB1`` and ``dB2`` have shape (n_paths, n_steps). A path that produces a
    non-finite value is frozen at nan and its step index recorded in
    ``failed_step`` (-1 for healthy paths). With ``check_bound`` every
    evaluated truncated coefficient is asserted to be at most h(delta).
    The compiled loop does the same arithmetic as ``step`` except that
    quarter-integer powers are formed from products and square roots, so
    results agree with ``step`` to a few ulp per step rather than bitwise.
    """
    dB1 = np.ascontiguousarray(np.atleast_2d(dB1), dtype=float)
    dB2 = np.ascontiguousarray(np.atleast_2d(dB2), dtype=float)
    n_paths, n_steps = dB1.shape
    if dB2.shape != dB1.shape:
        raise ValueError("dB1 and dB2 shapes differ")
    xs = np.empty((n_paths, n_steps + 1))
    ys = np.empty((n_paths, n_steps + 1))
    hits_x = np.zeros(n_paths, dtype=np.int64)
    hits_y = np.zeros(n_paths, dtype=np.int64)
    neg_y = np.zeros(n_paths, dtype=np.int64)
    failed = np.full(n_paths, -1, dtype=np.int64)
    worst = np.zeros(n_paths)
    _simulate_kernel(dB1, dB2, p.x0, p.phi0, p.alpha1, p.mu1, p.sigma1, p.rho, p.theta,
                     p.alpha2, p.mu2, p.sigma2, p.r, p.phi, cfg.delta, cfg.cap,
                     np.array([_quarter_code(e) for e in (p.rho, p.theta, p.r, p.phi)], dtype=np.int64),
                     xs, ys, hits_x, hits_y, neg_y, failed, worst)
    if check_bound and n_paths:
        top = float(np.max(worst))
        assert not top > cfg.h * (1.0 + 1e-12), f"truncated coefficient {top} exceeds h={cfg.h}"
    return BatchResult(xs, ys, hits_x, hits_y, neg_y, failed)


def simulate_path(grid: PathGrid, cfg: TruncationConfig, p: ModelParams,
                  check_bound: bool = False) -> Trajectory:
    """Run the scheme along one sampled Brownian path.

    The stored values are the step process at the grid points.
    """
    if grid.n_steps == 0:
        return Trajectory(np.zeros(1), np.array([p.x0]), np.array([p.phi0]))
    if not math.isclose(grid.delta, cfg.delta, rel_tol=1e-12):
        raise ConstraintError(
            f"grid step {grid.delta:g} differs from truncation step {cfg.delta:g}", "grid_matches_truncation")
    res = simulate_batch(grid.dB1[None, :], grid.dB2[None, :], cfg, p, check_bound=check_bound)
    if res.failed_step[0] >= 0:
        k = int(res.failed_step[0])
        raise SimulationError(f"non-finite state after step {k}", step=k)
    times = np.arange(grid.n_steps + 1) * grid.delta
    times[-1] = grid.t_end
    return Trajectory(times, res.x[0], res.y[0], int(res.trunc_hits_x[0]),
                      int(res.trunc_hits_y[0]), int(res.neg_excursions_y[0]))


def midpoint_gap(x_k, y_k, dB1_k, z_k, cfg: TruncationConfig, p: ModelParams):
    """Continuous interpolant minus step process, half-way through each step.

    The Brownian value at mid-step is drawn from the bridge conditional on the
    step increment: ``dB1_k / 2 + sqrt(delta) / 2 * z_k``.
    """
    d = cfg.delta
    half = 0.5 * dB1_k + 0.5 * math.sqrt(d) * z_k
    return (trunc_drift_asset(x_k, cfg, p) * (0.5 * d)
            + np.sqrt(np.abs(y_k)) * trunc_diffusion_asset(x_k, cfg, p) * half)
