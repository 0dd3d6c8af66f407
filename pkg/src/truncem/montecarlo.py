"""Path ensembles: moment estimates, coupled strong errors and interpolation gaps.

Paths are split into 10 contiguous batches for batch-means standard errors.
Work is cut into chunks whose size depends only on the problem, never on the
worker count, and chunk results are combined in index order with a pairwise
tree, so results are bit-identical for any number of workers.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .errors import ConstraintError, SimulationError
from .model import ModelParams
from .scheme import (
    Driver,
    _fmt,
    _read_columns,
    batch_increments,
    batch_normals,
    coarsen,
    grid_steps,
    midpoint_gap,
    simulate_batch,
)
from .truncation import TruncationConfig

__all__ = [
    "EnsembleConfig",
    "MomentReport",
    "StrongErrorReport",
    "GapReport",
    "estimate_moments",
    "estimate_moments_multi",
    "estimate_strong_error",
    "interpolation_gap_probe",
    "fit_order",
    "tree_sum",
    "default_workers",
]

N_BATCHES = 10
MAX_FAILED_FRACTION = 1e-3
_CHUNK_BUDGET = 1 << 23  # path-steps per chunk


def default_workers() -> int:
    env = os.environ.get("TRUNCEM_WORKERS")
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


def _is_multiple(big: float, small: float) -> int | None:
    m = big / small
    k = round(m)
    if k >= 1 and math.isclose(m, k, rel_tol=1e-9):
        return int(k)
    return None


@dataclass(frozen=True)
class EnsembleConfig:
    n_paths: int
    seed: int
    t_end: float
    p_moment: float = 2.0
    delta_list: tuple = ()
    delta_ref: float | None = None

    def __post_init__(self):
        if self.n_paths < 2:
            raise ConstraintError("n_paths must be >= 2", "n_paths_min")
        if not self.t_end > 0:
            raise ConstraintError("t_end must be positive", "t_end_positive")
        if self.p_moment < 2:
            raise ConstraintError("p_moment must be >= 2", "p_moment_min")
        object.__setattr__(self, "delta_list", tuple(float(d) for d in self.delta_list))
        if any(b >= a for a, b in zip(self.delta_list, self.delta_list[1:])):
            raise ConstraintError("delta_list must be strictly decreasing", "delta_list_decreasing")
        if self.delta_ref is not None:
            if _is_multiple(self.t_end, self.delta_ref) is None:
                raise ConstraintError("delta_ref must divide t_end", "delta_ref_divides_t_end")
            for d in self.delta_list:
                if _is_multiple(d, self.delta_ref) is None:
                    raise ConstraintError(f"delta_ref={self.delta_ref:g} does not divide delta={d:g}",
                                          "delta_ref_divides_delta_list")


def tree_sum(items):
    """Pairwise reduction in a fixed order."""
    items = list(items)
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def _batch_edges(n_paths: int):
    nb = min(N_BATCHES, n_paths)
    return np.linspace(0, n_paths, nb + 1).round().astype(int)


def _chunks(n_paths: int, chunk: int):
    return [(s, min(s + chunk, n_paths)) for s in range(0, n_paths, chunk)]


def _partition(n_paths: int, chunk: int):
    """(batch, start, stop) triples covering range(n_paths), never straddling a batch."""
    edges = _batch_edges(n_paths)
    nb = len(edges) - 1
    out = []
    for b in range(nb):
        for s in range(edges[b], edges[b + 1], chunk):
            out.append((b, s, min(s + chunk, edges[b + 1])))
    return out


def _chunk_size(n_steps: int) -> int:
    return int(min(4096, max(16, _CHUNK_BUDGET // max(n_steps, 1))))


def _run(fn, tasks, workers):
    workers = max(1, int(workers or 1))
    if workers == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def _increments(seed, start, stop, n_steps, delta, driver):
    return batch_increments(seed, start, stop, driver, n_steps, delta)


def _coupled_increments(seed, start, stop, n_base, delta_base, factor):
    dB1 = _increments(seed, start, stop, n_base, delta_base, Driver.B1)
    dB2 = _increments(seed, start, stop, n_base, delta_base, Driver.B2)
    return coarsen(dB1, factor), coarsen(dB2, factor)


def _check_failures(n_failed, n_paths):
    if n_failed > MAX_FAILED_FRACTION * n_paths:
        raise SimulationError(f"{n_failed} of {n_paths} paths produced non-finite values")


def _path_batch_stats(values, ok):
    """Batch-means statistics from per-path rows; rows with ``ok`` False are dropped."""
    edges = _batch_edges(len(values))
    sums, counts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        block = values[a:b][ok[a:b]]
        sums.append(tree_sum(list(block)) if len(block) else np.zeros(values.shape[1:]))
        counts.append(len(block))
    return _batch_stats(np.array(sums), np.array(counts))


def _batch_stats(batch_sums, batch_counts):
    """Grand mean and batch-means standard error from per-batch sums."""
    sums = np.asarray(batch_sums, dtype=float)
    counts = np.asarray(batch_counts, dtype=float)
    counts_b = counts.reshape((-1,) + (1,) * (sums.ndim - 1))
    mean = tree_sum(list(sums)) / counts.sum()
    if len(counts) < 2:
        return mean, np.full_like(mean, np.nan)
    means = sums / counts_b
    # centred on the first batch so identical batches give exactly zero
    se = np.std(means - means[0], axis=0, ddof=1) / math.sqrt(len(counts))
    return mean, se


def _resolve_trunc(trunc, delta):
    if isinstance(trunc, TruncationConfig):
        if not math.isclose(trunc.delta, delta, rel_tol=1e-12):
            raise ConstraintError(f"truncation built for delta={trunc.delta:g}, run uses {delta:g}",
                                  "grid_matches_truncation")
        return trunc
    return trunc(delta)


# ---------------------------------------------------------------- moments

@dataclass
class MomentReport:
    times: np.ndarray
    moment_x: np.ndarray
    se_x: np.ndarray
    moment_y: np.ndarray
    se_y: np.ndarray
    p_moment: float = 2.0
    n_paths: int = 0
    n_failed: int = 0

    @property
    def sup_moment_x(self) -> float:
        return float(np.max(self.moment_x))

    @property
    def sup_moment_y(self) -> float:
        return float(np.max(self.moment_y))

    @property
    def standard_errors(self):
        return self.se_x, self.se_y

    HEADER = ["t", "moment_x", "se_x", "moment_y", "se_y"]

    def to_csv(self, dest=None) -> str:
        cols = [self.times, self.moment_x, self.se_x, self.moment_y, self.se_y]
        return _write_rows(self.HEADER, zip(*cols), dest)

    @classmethod
    def from_csv(cls, src, p_moment=2.0, n_paths=0) -> "MomentReport":
        c = _read_columns(src, cls.HEADER)
        return cls(c["t"], c["moment_x"], c["se_x"], c["moment_y"], c["se_y"], p_moment, n_paths)


def _write_rows(header, rows, dest):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, (int, np.integer)) else _fmt(v) for v in row])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text, encoding="utf-8", newline="")
    return text


@nb.njit(cache=True)
def _power_sums(paths, ok, q):
    """Column sums of |paths|^q over rows with ok set; integer q uses repeated products."""
    n, m = paths.shape
    out = np.zeros(m)
    qi = int(q)
    integral = qi == q and 0 <= qi <= 16
    for i in range(n):
        if not ok[i]:
            continue
        for j in range(m):
            a = abs(paths[i, j])
            if integral:
                v = 1.0
                for _ in range(qi):
                    v *= a
            else:
                v = a ** q
            out[j] += v
    return out


def _moment_task(args):
    model, trunc, seed, start, stop, n_steps, p_values = args
    dB1 = _increments(seed, start, stop, n_steps, trunc.delta, Driver.B1)
    dB2 = _increments(seed, start, stop, n_steps, trunc.delta, Driver.B2)
    res = simulate_batch(dB1, dB2, trunc, model)
    ok = res.ok
    sums = np.stack([np.stack([_power_sums(res.x, ok, q), _power_sums(res.y, ok, q)])
                     for q in p_values])
    return sums, int(ok.sum()), int((~ok).sum())


def estimate_moments_multi(cfg: EnsembleConfig, delta: float, model: ModelParams, trunc,
                           p_values, workers: int = 1) -> dict:
    """Sample absolute moments E|X(t)|^p and E|Y(t)|^p for several p from one ensemble."""
    n_steps, delta = grid_steps(cfg.t_end, delta)
    tc = _resolve_trunc(trunc, delta)
    p_values = tuple(float(q) for q in p_values)
    parts = _partition(cfg.n_paths, _chunk_size(n_steps))
    tasks = [(model, tc, cfg.seed, s, e, n_steps, p_values) for _, s, e in parts]
    results = _run(_moment_task, tasks, workers)

    nb = max(b for b, _, _ in parts) + 1
    per_batch = [[] for _ in range(nb)]
    counts = np.zeros(nb)
    n_failed = 0
    for (b, _, _), (sums, n_ok, n_bad) in zip(parts, results):
        per_batch[b].append(sums)
        counts[b] += n_ok
        n_failed += n_bad
    _check_failures(n_failed, cfg.n_paths)
    batch_sums = np.stack([tree_sum(chunks) for chunks in per_batch])
    mean, se = _batch_stats(batch_sums, counts)

    times = np.arange(n_steps + 1) * delta
    times[-1] = cfg.t_end
    out = {}
    for i, q in enumerate(p_values):
        out[q] = MomentReport(times.copy(), mean[i, 0], se[i, 0], mean[i, 1], se[i, 1],
                              q, cfg.n_paths, n_failed)
    return out


def estimate_moments(cfg: EnsembleConfig, delta: float, model: ModelParams, trunc,
                     workers: int = 1) -> MomentReport:
    """Per-time pth absolute moments with batch-means standard errors.

    ``trunc`` is a TruncationConfig built for ``delta`` or a builder called
    with the (possibly adjusted) step.
    """
    allowed = list(cfg.delta_list) + ([cfg.delta_ref] if cfg.delta_ref else [])
    if allowed and not any(math.isclose(delta, d, rel_tol=1e-12) for d in allowed):
        raise ConstraintError(f"delta={delta:g} is not in delta_list or delta_ref", "delta_in_ensemble")
    return estimate_moments_multi(cfg, delta, model, trunc, [cfg.p_moment], workers)[cfg.p_moment]


# ---------------------------------------------------------- strong error

@dataclass
class StrongErrorReport:
    deltas: np.ndarray
    errors: np.ndarray
    per_delta_stderr: np.ndarray
    p_moment: float = 2.0
    n_paths: int = 0
    n_failed: int = 0
    fitted_order: float = field(init=False)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        self.per_delta_stderr = np.asarray(self.per_delta_stderr, dtype=float)
        self.fitted_order = fit_order(self.deltas, self.errors)

    HEADER = ["delta", "error", "stderr"]

    def to_csv(self, dest=None) -> str:
        return _write_rows(self.HEADER, zip(self.deltas, self.errors, self.per_delta_stderr), dest)

    @classmethod
    def from_csv(cls, src, p_moment=2.0, n_paths=0) -> "StrongErrorReport":
        c = _read_columns(src, cls.HEADER)
        return cls(c["delta"], c["error"], c["stderr"], p_moment, n_paths)


def fit_order(deltas, errors) -> float:
    """Least-squares slope of log(error) against log(delta), positive errors only."""
    deltas, errors = np.asarray(deltas, float), np.asarray(errors, float)
    keep = errors > 0
    if keep.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(deltas[keep]), np.log(errors[keep]), 1)
    return float(slope)


def _strong_task(args):
    model, builder, seed, start, stop, delta_ref, n_ref, deltas, p = args
    dB1 = _increments(seed, start, stop, n_ref, delta_ref, Driver.B1)
    dB2 = _increments(seed, start, stop, n_ref, delta_ref, Driver.B2)
    ref = simulate_batch(dB1, dB2, builder(delta_ref), model)
    ok = ref.ok.copy()
    out = np.zeros((stop - start, len(deltas)))
    for j, d in enumerate(deltas):
        factor = _is_multiple(d, delta_ref)
        if factor == 1:
            continue
        res = simulate_batch(coarsen(dB1, factor), coarsen(dB2, factor), builder(d), model)
        ok &= res.ok
        diff = np.abs(res.x - ref.x[:, ::factor])
        out[:, j] = np.max(diff, axis=1) ** p
    out[~ok] = np.nan
    return out


def estimate_strong_error(cfg: EnsembleConfig, model: ModelParams, trunc_builder,
                          workers: int = 1) -> StrongErrorReport:
    """Coupled strong errors against a fine-step reference on the same Brownian paths.

    For each path the reference runs at ``delta_ref``; every coarse step uses
    block sums of the same increments and its own truncation level. The error
    is ``(E max_k |X_delta(t_k) - X_ref(t_k)|^p)^(1/p)`` over the coarse grid.
    """
    if cfg.delta_ref is None or not cfg.delta_list:
        raise ConstraintError("strong error needs delta_list and delta_ref", "delta_ref_required")
    n_ref = _is_multiple(cfg.t_end, cfg.delta_ref)
    delta_ref = cfg.t_end / n_ref
    deltas = tuple(cfg.delta_list)
    p = cfg.p_moment
    tasks = [(model, trunc_builder, cfg.seed, s, e, delta_ref, n_ref, deltas, p)
             for s, e in _chunks(cfg.n_paths, _chunk_size(n_ref))]
    per_path = np.concatenate(_run(_strong_task, tasks, workers), axis=0)

    bad = np.isnan(per_path).any(axis=1)
    _check_failures(int(bad.sum()), cfg.n_paths)
    mean, se_mean = _path_batch_stats(per_path, ~bad)
    errors = mean ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(mean > 0, se_mean * mean ** (1.0 / p - 1.0) / p, 0.0)
    return StrongErrorReport(np.array(deltas), errors, se, p, cfg.n_paths, int(bad.sum()))


# ------------------------------------------------------ interpolation gap

@dataclass
class GapReport:
    deltas: np.ndarray
    gap_sup: np.ndarray   # sup over mid-step times of E|x_cont - x_step|^p
    gap_mean: np.ndarray  # time average of the same
    bound_scale: np.ndarray  # delta^(p/2) h(delta)^p
    p_moment: float = 2.0

    @property
    def ratios(self) -> np.ndarray:
        return self.gap_sup / self.bound_scale

    @property
    def spread(self) -> float:
        """max(ratio) / min(ratio) over the step sizes."""
        r = self.ratios
        return float(np.max(r) / np.min(r))

    def bounded(self, factor: float = 3.0) -> bool:
        """True if the ratio stays within a band of width ``factor`` across all steps."""
        r = self.ratios
        return bool(np.all(np.isfinite(r)) and np.all(r > 0) and self.spread <= factor)

    def dominated(self, factor: float = 3.0) -> bool:
        """One-sided version: the ratio never exceeds ``factor`` times its coarsest-step value."""
        r = self.ratios
        return bool(np.all(np.isfinite(r)) and np.max(r) <= factor * r[0])


def _gap_task(args):
    model, trunc, seed, start, stop, n_steps, p = args
    dB1 = _increments(seed, start, stop, n_steps, trunc.delta, Driver.B1)
    dB2 = _increments(seed, start, stop, n_steps, trunc.delta, Driver.B2)
    z = batch_normals(seed, start, stop, Driver.BRIDGE1, n_steps)
    res = simulate_batch(dB1, dB2, trunc, model)
    ok = res.ok
    gap = midpoint_gap(res.x[ok, :-1], res.y[ok, :-1], dB1[ok], z[ok], trunc, model)
    return np.sum(np.abs(gap) ** p, axis=0), int(ok.sum()), int((~ok).sum())


def interpolation_gap_probe(cfg: EnsembleConfig, model: ModelParams, trunc_builder,
                            delta_list=None, workers: int = 1) -> GapReport:
    """Estimate E|x_delta(t) - xbar_delta(t)|^p at mid-step points for each step size."""
    deltas = tuple(delta_list if delta_list is not None else cfg.delta_list)
    p = cfg.p_moment
    sups, means, scales, used = [], [], [], []
    for d in deltas:
        n_steps, d = grid_steps(cfg.t_end, d)
        tc = trunc_builder(d)
        parts = _partition(cfg.n_paths, _chunk_size(n_steps))
        tasks = [(model, tc, cfg.seed, s, e, n_steps, p) for _, s, e in parts]
        results = _run(_gap_task, tasks, workers)
        n_ok = sum(r[1] for r in results)
        _check_failures(sum(r[2] for r in results), cfg.n_paths)
        m = tree_sum([r[0] for r in results]) / n_ok
        sups.append(float(np.max(m)))
        means.append(float(np.mean(m)))
        scales.append(d ** (p / 2) * tc.h ** p)
        used.append(d)
    return GapReport(np.array(used), np.array(sups), np.array(means), np.array(scales), p)
