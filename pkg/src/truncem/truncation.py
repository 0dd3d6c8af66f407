"""Truncation machinery: dominating function, step-size map and capped coefficients.

A truncated coefficient evaluates the original one at ``min(x, cap)`` with
``cap = nu^{-1}(h(delta))`` for non-negative arguments and takes a fixed
value on the negative half-line. The construction guarantees every truncated
coefficient is bounded in magnitude by ``h(delta)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintError, DomainError
from .model import ModelParams

__all__ = [
    "NuFunction",
    "TruncationConfig",
    "TruncationBuilder",
    "coefficient_envelope",
    "build_nu",
    "nu_inverse",
    "delta_star_for",
    "h_of",
    "make_truncation",
    "trunc_drift_asset",
    "trunc_diffusion_asset",
    "trunc_drift_var",
    "trunc_diffusion_var",
    "probe_truncated_khasminskii",
]

log = logging.getLogger(__name__)

DEFAULT_H_EXPONENT = 0.25
PAPER_COMPAT_H_EXPONENT = 0.5
SAFETY_FACTOR = 1.05


@dataclass(frozen=True)
class NuFunction:
    """nu(u) = c_nu * (1 + u**q_nu), strictly increasing on u >= 0."""

    c_nu: float
    q_nu: float

    def __post_init__(self):
        if not (self.c_nu > 0 and self.q_nu > 0):
            raise ValueError("c_nu and q_nu must be positive")

    def __call__(self, u):
        return self.c_nu * (1.0 + np.power(u, self.q_nu))

    def inverse(self, y):
        return nu_inverse(self, y)


def coefficient_envelope(u, p: ModelParams):
    """Sup of |f1|, |f2|, g1, g2 over arguments of magnitude at most u.

    Each coefficient is monotone in its argument, so the sup over [0, u] is
    attained at an endpoint. The negative-branch values of the truncated
    coefficients are the u = 0 values and are covered too.
    """
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore"):
        terms = (
            np.full_like(u, p.alpha1 * p.mu1),
            p.alpha1 * np.abs(p.mu1 - np.power(u, p.rho)),
            p.sigma1 * np.power(u, p.theta),
            np.full_like(u, p.alpha2 * p.mu2),
            p.alpha2 * np.abs(p.mu2 - np.power(u, p.r)),
            p.sigma2 * np.power(u, p.phi),
        )
    return np.maximum.reduce(terms)


def build_nu(p: ModelParams, grid_samples: int = 10_000) -> NuFunction:
    """Fit the dominating function to the model coefficients.

    The exponent is the largest of the four coefficient exponents. The scale is
    the largest envelope-to-``(1 + u^q)`` ratio over a geometric grid, inflated
    by a 5% safety factor, then re-checked on an independent random sample.
    """
    q = max(p.rho, p.theta, p.r, p.phi)
    top = min(1e6, 10.0 ** (250.0 / q))
    u = np.concatenate(([0.0], np.geomspace(1e-6, top, grid_samples)))
    ratio = coefficient_envelope(u, p) / (1.0 + np.power(u, q))
    if not np.all(np.isfinite(ratio)):
        raise ConstraintError("envelope ratio is not finite on the grid", "nu_fit")
    k = int(np.argmax(ratio))
    if k == len(u) - 1:
        ref = ratio[np.searchsorted(u, top / 10.0)]
        if ratio[-1] > ref * (1.0 + 1e-3):
            raise ConstraintError("envelope ratio did not stabilise at the grid edge", "nu_fit")
    c = SAFETY_FACTOR * float(ratio[k])
    if c <= 0:
        raise ConstraintError("coefficients vanish identically; nothing to dominate", "nu_fit")
    nu = NuFunction(c, float(q))

    rng = np.random.default_rng(0x5EED)
    check = np.concatenate((rng.uniform(0.0, 2.0, 5000),
                            10.0 ** rng.uniform(-8.0, math.log10(top) + 1.0, 5000)))
    check = check[check ** q < 1e300]
    if np.any(coefficient_envelope(check, p) > nu(check) * (1.0 + 1e-12)):
        raise ConstraintError("fitted nu fails to dominate the coefficients", "nu_fit")
    return nu


def nu_inverse(nu: NuFunction, y):
    """Inverse of nu on [nu(0), inf)."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr < nu.c_nu):
        raise DomainError(f"nu^-1 is defined on [{nu.c_nu}, inf)")
    out = np.power(arr / nu.c_nu - 1.0, 1.0 / nu.q_nu)
    return float(out) if arr.ndim == 0 else out


def h_of(delta: float, eps: float) -> float:
    """h(delta) = delta**-eps, rounded down where needed so that
    delta**(1/4) * h <= 1 holds in floating point whenever eps <= 1/4."""
    h = delta ** -eps
    if eps <= 0.25:
        while delta ** 0.25 * h > 1.0:
            h = math.nextafter(h, 0.0)
    return h


def _delta_star(nu, eps):
    target = float(nu(1.0))
    d = min(1.0, target ** (-1.0 / eps))
    # pow rounding can leave h(d) an ulp short of nu(1)
    while h_of(d, eps) < target:
        d = math.nextafter(d, 0.0)
    return d


def delta_star_for(nu: NuFunction, eps: float) -> float:
    """Largest step for which h(delta) = delta**-eps meets all admissibility constraints."""
    if not 0.0 < eps <= 0.25:
        raise ValueError("eps must lie in (0, 1/4]")
    return _delta_star(nu, eps)


@dataclass(frozen=True)
class TruncationConfig:
    """Truncation level for one step size.

    ``h(delta) = delta**-h_exponent`` and ``cap = nu^{-1}(h(delta))``. With
    ``paper_compat`` the exponent is 1/2, which breaks the requirement
    ``delta**(1/4) h(delta) <= 1``; steps above ``delta_star`` are then allowed
    with a recorded note instead of being rejected.
    """

    nu: NuFunction
    h_exponent: float
    delta_star: float
    delta: float
    paper_compat: bool = False
    notes: tuple = ()
    h: float = field(init=False)
    cap: float = field(init=False)

    def __post_init__(self):
        eps = self.h_exponent
        if self.paper_compat:
            if eps != PAPER_COMPAT_H_EXPONENT:
                raise ValueError("paper_compat fixes h_exponent = 0.5")
        elif not 0.0 < eps <= 0.25:
            raise ConstraintError("h_exponent must lie in (0, 1/4]", "h_exponent_range")
        if not self.delta > 0:
            raise ConstraintError("delta must be positive", "delta_positive")
        notes = list(self.notes)
        if self.delta > self.delta_star * (1.0 + 1e-12):
            msg = f"delta={self.delta:g} exceeds delta_star={self.delta_star:g}"
            if not self.paper_compat:
                raise ConstraintError(msg, "delta_le_delta_star")
            if msg not in notes:
                notes.append(msg)
        h = h_of(self.delta, eps)
        if h < self.nu.c_nu:
            raise ConstraintError(
                f"h(delta)={h:g} is below nu(0)={self.nu.c_nu:g}; the cap is undefined",
                "h_ge_nu0")
        object.__setattr__(self, "notes", tuple(notes))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "cap", nu_inverse(self.nu, h))


@dataclass(frozen=True)
class TruncationBuilder:
    """Picklable factory producing a TruncationConfig per step size."""

    nu: NuFunction
    h_exponent: float = DEFAULT_H_EXPONENT
    paper_compat: bool = False

    @property
    def delta_star(self) -> float:
        return _delta_star(self.nu, self.h_exponent)

    def __call__(self, delta: float) -> TruncationConfig:
        notes = ()
        if self.paper_compat:
            notes = ("paper_compat: h(delta)=delta^-1/2 violates delta^(1/4) h(delta) <= 1",)
        return TruncationConfig(self.nu, self.h_exponent, self.delta_star, delta,
                                self.paper_compat, notes)


def make_truncation(p: ModelParams, delta: float | None = None, h_exponent: float = DEFAULT_H_EXPONENT,
                    paper_compat: bool = False, nu: NuFunction | None = None):
    """Build a TruncationBuilder for ``p``, or a TruncationConfig if ``delta`` is given."""
    if paper_compat:
        if h_exponent not in (DEFAULT_H_EXPONENT, PAPER_COMPAT_H_EXPONENT):
            log.warning("paper_compat overrides h_exponent=%g with 0.5", h_exponent)
        h_exponent = PAPER_COMPAT_H_EXPONENT
        log.warning("paper_compat: h(delta)=delta^-1/2 violates delta^(1/4) h(delta) <= 1")
    builder = TruncationBuilder(nu or build_nu(p), h_exponent, paper_compat)
    return builder if delta is None else builder(delta)


def _out(arr, scalar):
    return float(arr) if scalar else arr


def trunc_drift_asset(x, cfg: TruncationConfig, p: ModelParams):
    arr = np.asarray(x, dtype=float)
    xc = np.minimum(np.maximum(arr, 0.0), cfg.cap)
    out = np.where(arr < 0, p.alpha1 * p.mu1, p.alpha1 * (p.mu1 - np.power(xc, p.rho)))
    return _out(out, arr.ndim == 0)


def trunc_diffusion_asset(x, cfg: TruncationConfig, p: ModelParams):
    arr = np.asarray(x, dtype=float)
    xc = np.minimum(np.maximum(arr, 0.0), cfg.cap)
    out = np.where(arr < 0, 0.0, p.sigma1 * np.power(xc, p.theta))
    return _out(out, arr.ndim == 0)


def trunc_drift_var(v, cfg: TruncationConfig, p: ModelParams):
    arr = np.asarray(v, dtype=float)
    vc = np.minimum(np.maximum(arr, 0.0), cfg.cap)
    out = np.where(arr < 0, p.alpha2 * p.mu2, p.alpha2 * (p.mu2 - np.power(vc, p.r)))
    return _out(out, arr.ndim == 0)


def trunc_diffusion_var(v, cfg: TruncationConfig, p: ModelParams):
    arr = np.asarray(v, dtype=float)
    vc = np.minimum(np.maximum(arr, 0.0), cfg.cap)
    out = np.where(arr < 0, 0.0, p.sigma2 * np.power(vc, p.phi))
    return _out(out, arr.ndim == 0)


def probe_truncated_khasminskii(cfg: TruncationConfig, p: ModelParams, p_moment: float = 2.0,
                                x_max: float = 1e3, phi_max: float = 10.0, n: int = 4000):
    """Grid maxima of the growth ratios for the truncated coefficients.

    Returns ``(K6, K7)``. The x grid deliberately extends far beyond the cap.
    """
    c = 0.5 * (p_moment - 1.0)
    xs = np.geomspace(1e-6, x_max, n)
    phis = np.geomspace(1e-6, phi_max, n)
    a = xs * trunc_drift_asset(xs, cfg, p)
    b = c * trunc_diffusion_asset(xs, cfg, p) ** 2
    k6 = max(np.max((a + phi * b) / (1.0 + phi * xs * xs)) for phi in (phis[0], phis[-1]))
    num = phis * trunc_drift_var(phis, cfg, p) + c * trunc_diffusion_var(phis, cfg, p) ** 2
    k7 = np.max(num / (1.0 + phis * phis))
    return float(k6), float(k7)
