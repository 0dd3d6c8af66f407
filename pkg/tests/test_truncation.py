import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from truncem.errors import ConstraintError, DomainError
from truncem.model import diffusion_asset, diffusion_var, drift_asset, drift_var
from truncem.truncation import (
    NuFunction,
    TruncationConfig,
    build_nu,
    coefficient_envelope,
    delta_star_for,
    h_of,
    make_truncation,
    nu_inverse,
    probe_truncated_khasminskii,
    trunc_diffusion_asset,
    trunc_diffusion_var,
    trunc_drift_asset,
    trunc_drift_var,
)

from conftest import mild_params, oracle_params

TRUNC = (trunc_drift_asset, trunc_diffusion_asset, trunc_drift_var, trunc_diffusion_var)
RAW = (drift_asset, diffusion_asset, drift_var, diffusion_var)


def test_reference_nu(ref_model):
    nu = build_nu(ref_model)
    assert nu.q_nu == 5.0
    assert nu.c_nu == pytest.approx(4.2, rel=1e-12)  # 1.05 * alpha2 * mu2
    assert nu(1.0) == pytest.approx(8.4, rel=1e-12)


@given(u=st.floats(0.0, 1e40))
def test_nu_dominates_envelope(u):
    for p in (mild_params(), oracle_params()):
        nu = build_nu(p)
        if u ** nu.q_nu < 1e300:
            assert coefficient_envelope(u, p) <= nu(u) * (1 + 1e-12)


@given(y=st.floats(1.0, 1e15))
def test_nu_round_trip(y):
    nu = NuFunction(4.2, 5.0)
    y = 4.2 * y
    assert nu(nu_inverse(nu, y)) == pytest.approx(y, rel=1e-12)


def test_nu_inverse_domain():
    nu = NuFunction(2.0, 3.0)
    assert nu_inverse(nu, 2.0) == 0.0
    with pytest.raises(DomainError):
        nu_inverse(nu, 1.999)
    with pytest.raises(ValueError):
        NuFunction(0.0, 2.0)


def test_delta_star_formula(ref_model):
    nu = build_nu(ref_model)
    ds = delta_star_for(nu, 0.25)
    assert ds == pytest.approx(8.4 ** -4, rel=1e-12)
    assert h_of(ds, 0.25) >= nu(1.0)
    assert delta_star_for(NuFunction(0.1, 2.0), 0.25) == 1.0
    with pytest.raises(ValueError):
        delta_star_for(nu, 0.3)


@given(d=st.floats(1e-300, 1.0))
def test_h_respects_quarter_rule(d):
    for eps in (0.25, 0.2, 0.1):
        h = h_of(d, eps)
        assert d ** 0.25 * h <= 1.0
        assert h == pytest.approx(d ** -eps, rel=1e-15)


def test_reference_default_rejects_coarse_steps(ref_model):
    b = make_truncation(ref_model)
    with pytest.raises(ConstraintError) as exc:
        b(1e-3)
    assert exc.value.constraint == "delta_le_delta_star"
    cfg = b(b.delta_star)
    assert cfg.cap == pytest.approx(1.0, rel=1e-9)


def test_compat_mode_notes_and_cap(ref_model):
    b = make_truncation(ref_model, paper_compat=True)
    cfg = b(1e-3)
    assert cfg.h == pytest.approx(1e-3 ** -0.5)
    assert cfg.cap == pytest.approx((cfg.h / 4.2 - 1.0) ** 0.2, rel=1e-12)
    assert not any("exceeds delta_star" in n for n in cfg.notes)
    assert any("exceeds delta_star" in n for n in b(2.0 ** -6).notes)
    with pytest.raises(ConstraintError) as exc:
        b(0.1)  # h = 3.16 < nu(0) = 4.2
    assert exc.value.constraint == "h_ge_nu0"


def test_config_checks(mild_model):
    nu = build_nu(mild_model)
    with pytest.raises(ConstraintError):
        TruncationConfig(nu, 0.3, 0.5, 0.1)
    with pytest.raises(ConstraintError):
        TruncationConfig(nu, 0.25, 0.5, 0.0)
    with pytest.raises(ValueError):
        TruncationConfig(nu, 0.25, 0.5, 0.1, paper_compat=True)


@given(x=st.floats(-1e6, 1e6), k=st.integers(1, 20))
def test_truncated_bounded_by_h(x, k):
    p = mild_params()
    cfg = make_truncation(p, 2.0 ** -k)
    for fn in TRUNC:
        assert abs(fn(x, cfg, p)) <= cfg.h


@given(frac=st.floats(0.0, 1.0))
def test_truncation_inactive_below_cap(frac):
    p = mild_params()
    cfg = make_truncation(p, 2.0 ** -8)
    x = frac * cfg.cap
    for t, raw in zip(TRUNC, RAW):
        assert t(x, cfg, p) == raw(x, p)


def test_truncation_branches(ref_model):
    cfg = make_truncation(ref_model, 1e-3, paper_compat=True)
    p = ref_model
    assert trunc_drift_asset(-5.0, cfg, p) == p.alpha1 * p.mu1
    assert trunc_diffusion_asset(-5.0, cfg, p) == 0.0
    assert trunc_drift_var(-5.0, cfg, p) == p.alpha2 * p.mu2
    assert trunc_diffusion_var(-5.0, cfg, p) == 0.0
    big = np.array([cfg.cap, 10 * cfg.cap, 1e6])
    for fn in TRUNC:
        out = fn(big, cfg, p)
        assert np.all(out == out[0])


def test_truncated_khasminskii_finite(ref_model):
    cfg = make_truncation(ref_model, 1e-3, paper_compat=True)
    k6, k7 = probe_truncated_khasminskii(cfg, ref_model)
    assert math.isfinite(k6) and math.isfinite(k7)
    # capped growth cannot exceed the untruncated envelope at the cap
    assert k6 < 10 * cfg.h ** 2
