"""Coefficients of the coupled asset/variance SDE and checks on its parameters.

The model is

    dx   = alpha1 (mu1 - x^rho) dt + sqrt(phi_t) sigma1 x^theta dB1
    dphi = alpha2 (mu2 - phi^r) dt + sigma2 phi^phi dB2

with B1 and B2 independent. All four coefficient functions here are the
untruncated ones and are only defined on non-negative arguments.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import DomainError, NonFiniteError

__all__ = [
    "ModelParams",
    "AssumptionReport",
    "ProbeGrid",
    "MODES",
    "drift_asset",
    "diffusion_asset",
    "drift_var",
    "diffusion_var",
    "validate",
    "probe_khasminskii",
]

MODES = ("strict", "boundary", "oracle")


@dataclass(frozen=True)
class ModelParams:
    alpha1: float
    mu1: float
    sigma1: float
    rho: float
    theta: float
    alpha2: float
    mu2: float
    sigma2: float
    r: float
    phi: float
    x0: float
    phi0: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float, np.floating, np.integer)):
                raise TypeError(f"{f.name} must be a real number, got {v!r}")
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v!r}")
            object.__setattr__(self, f.name, float(v))

    @classmethod
    def reference_example(cls) -> "ModelParams":
        """The demonstration parameter set: asset reverting to 1, variance to sqrt(2)."""
        return cls(alpha1=2.0, mu1=1.0, sigma1=3.0, rho=5.0, theta=1.25,
                   alpha2=2.0, mu2=2.0, sigma2=0.5, r=2.0, phi=1.5,
                   x0=0.2, phi0=2.0)

    @classmethod
    def from_mapping(cls, data) -> "ModelParams":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data]
        extra = [k for k in data if k not in names]
        if missing or extra:
            raise KeyError(f"model fields: missing={missing} unknown={extra}")
        return cls(**{n: data[n] for n in names})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def asset_root(self) -> float:
        """Level where the asset drift vanishes."""
        return self.mu1 ** (1.0 / self.rho)

    @property
    def var_root(self) -> float:
        return self.mu2 ** (1.0 / self.r)


def _nonneg(v, name):
    arr = np.asarray(v, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError(f"{name} contains nan")
    if np.any(arr < 0):
        raise DomainError(f"{name} must be >= 0 (negative branch is handled by truncation)")
    return arr


def _finish(out, scalar):
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("coefficient evaluation overflowed")
    return float(out) if scalar else out


def drift_asset(x, p: ModelParams):
    """alpha1 * (mu1 - x**rho) for x >= 0."""
    arr = _nonneg(x, "x")
    with np.errstate(over="ignore"):
        out = p.alpha1 * (p.mu1 - np.power(arr, p.rho))
    return _finish(out, arr.ndim == 0)


def diffusion_asset(x, p: ModelParams):
    """sigma1 * x**theta for x >= 0."""
    arr = _nonneg(x, "x")
    with np.errstate(over="ignore"):
        out = p.sigma1 * np.power(arr, p.theta)
    return _finish(out, arr.ndim == 0)


def drift_var(v, p: ModelParams):
    """alpha2 * (mu2 - v**r) for v >= 0."""
    arr = _nonneg(v, "v")
    with np.errstate(over="ignore"):
        out = p.alpha2 * (p.mu2 - np.power(arr, p.r))
    return _finish(out, arr.ndim == 0)


def diffusion_var(v, p: ModelParams):
    """sigma2 * v**phi for v >= 0."""
    arr = _nonneg(v, "v")
    with np.errstate(over="ignore"):
        out = p.sigma2 * np.power(arr, p.phi)
    return _finish(out, arr.ndim == 0)


@dataclass
class AssumptionReport:
    mode: str
    strict_ok: bool
    boundary_cases: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    khasminskii_constants: tuple = (math.nan, math.nan)

    @property
    def ok(self) -> bool:
        """Whether the parameters are acceptable under ``mode``."""
        if self.mode == "strict":
            return self.strict_ok
        return not self.violations


@dataclass(frozen=True)
class ProbeGrid:
    """Geometric sample grid on (0, x_max] x (0, phi_max]."""

    x_max: float = 10.0
    phi_max: float = 10.0
    n: int = 10_000
    decades: float = 8.0

    def x_points(self):
        return np.geomspace(self.x_max * 10.0 ** -self.decades, self.x_max, self.n)

    def phi_points(self):
        return np.geomspace(self.phi_max * 10.0 ** -self.decades, self.phi_max, self.n)


def _asset_ratio(x, phi, p, p_moment):
    c = 0.5 * (p_moment - 1.0)
    num = x * p.alpha1 * (p.mu1 - x ** p.rho) + c * phi * (p.sigma1 * x ** p.theta) ** 2
    return num / (1.0 + phi * x * x)


def _var_ratio(v, p, p_moment):
    c = 0.5 * (p_moment - 1.0)
    num = v * p.alpha2 * (p.mu2 - v ** p.r) + c * (p.sigma2 * v ** p.phi) ** 2
    return num / (1.0 + v * v)


def _asset_sup(x, phi_lo, phi_hi, p, p_moment):
    # For fixed x the ratio is a Moebius map in phi, hence monotone: the sup
    # over any phi interval sits at an endpoint.
    return np.maximum(_asset_ratio(x, phi_lo, p, p_moment), _asset_ratio(x, phi_hi, p, p_moment))


def _grows_without_bound(profile_fn, edge, max_exp, extra_decades=12.0, n=2000):
    far = min(edge * 10.0 ** extra_decades, 10.0 ** (250.0 / max(max_exp, 1.0)))
    if far <= edge * 10.0:
        return False
    u = np.geomspace(edge, far, n)
    with np.errstate(over="ignore", invalid="ignore"):
        prof = profile_fn(u)
    if not np.all(np.isfinite(prof)):
        return True
    if np.argmax(prof) != n - 1 or prof[-1] <= 0:
        return False
    # require a log-log slope of at least ~0.05 over the last three decades
    back = np.searchsorted(u, far / 1e3)
    base = prof[back]
    if base <= 0:
        return True
    return prof[-1] / base > 10.0 ** 0.15


def probe_khasminskii(p: ModelParams, p_moment: float = 2.0, grid: ProbeGrid | None = None):
    """Smallest constants (K4, K5) making the one-sided growth bounds hold on a grid.

    K4 bounds ``x f1(x) + (p-1)/2 phi g1(x)^2`` by ``K4 (1 + phi x^2)`` and K5
    bounds ``phi f2(phi) + (p-1)/2 g2(phi)^2`` by ``K5 (1 + phi^2)``. A constant
    is returned as ``inf`` when the ratio keeps growing as the grid is pushed
    past its outer edge, which happens when the parameter inequalities fail.
    """
    if p_moment < 2:
        raise ValueError("p_moment must be >= 2")
    grid = grid or ProbeGrid()
    xs, phis = grid.x_points(), grid.phi_points()
    phi_lo, phi_hi = phis[0], phis[-1]

    k4 = float(np.max(_asset_sup(xs, phi_lo, phi_hi, p, p_moment)))
    k5 = float(np.max(_var_ratio(phis, p, p_moment)))

    max_exp_x = max(1.0 + p.rho, 2.0 * p.theta)
    max_exp_v = max(1.0 + p.r, 2.0 * p.phi)
    if _grows_without_bound(lambda u: _asset_sup(u, phi_lo, phi_hi, p, p_moment), grid.x_max, max_exp_x):
        k4 = math.inf
    if _grows_without_bound(lambda u: _var_ratio(u, p, p_moment), grid.phi_max, max_exp_v):
        k5 = math.inf
    return k4, k5


def _cmp(lhs, rhs):
    """-1, 0, +1 with a relative tie tolerance."""
    if math.isclose(lhs, rhs, rel_tol=1e-12, abs_tol=1e-15):
        return 0
    return 1 if lhs > rhs else -1


def validate(p: ModelParams, mode: str = "strict", p_moment: float = 2.0,
             grid: ProbeGrid | None = None) -> AssumptionReport:
    """Check the parameter inequalities under one of three strictness levels.

    ``strict`` wants every exponent above 1 and both growth inequalities
    strict. ``boundary`` additionally admits equality in the growth
    inequalities. ``oracle`` admits the degenerate linear settings (unit
    exponents, zero volatilities, zero variance reversion) used for closed-form
    cross-checks. Never raises; inspect ``report.ok``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    oracle = mode == "oracle"
    boundary, violations = [], []

    for name in ("alpha1", "mu1", "mu2"):
        if not getattr(p, name) > 0:
            violations.append(f"{name}>0")
    for name in ("sigma1", "alpha2", "sigma2"):
        v = getattr(p, name)
        if v > 0:
            continue
        if v == 0 and oracle:
            boundary.append(f"{name}=0 (oracle)")
        else:
            violations.append(f"{name}>0")
    for name in ("x0", "phi0"):
        if not getattr(p, name) > 0:
            violations.append(f"{name}>0")

    for name in ("rho", "theta", "r", "phi"):
        c = _cmp(getattr(p, name), 1.0)
        if c > 0:
            continue
        if c == 0 and oracle:
            boundary.append(f"{name}=1 (oracle)")
        else:
            violations.append(f"{name}>1")

    for label, lhs, rhs in (("1+rho>2*theta", 1.0 + p.rho, 2.0 * p.theta),
                            ("1+r>2*phi", 1.0 + p.r, 2.0 * p.phi)):
        c = _cmp(lhs, rhs)
        if c > 0:
            continue
        if c == 0:
            # strict mode rejects this through strict_ok
            boundary.append(label)
        else:
            violations.append(label)

    try:
        k4, k5 = probe_khasminskii(p, p_moment, grid)
    except (FloatingPointError, ValueError, ZeroDivisionError):
        k4 = k5 = math.nan
    if not math.isfinite(k4):
        violations.append("khasminskii:asset")
    if not math.isfinite(k5):
        violations.append("khasminskii:variance")

    violations = list(dict.fromkeys(violations))
    strict_ok = not violations and not boundary
    return AssumptionReport(mode=mode, strict_ok=strict_ok, boundary_cases=boundary,
                            violations=violations, khasminskii_constants=(k4, k5))
