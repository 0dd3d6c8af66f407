import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from truncem.errors import ConstraintError
from truncem.montecarlo import EnsembleConfig
from truncem.pricing import BarrierOptionSpec, PriceReport, payoff_path, payoffs, price
from truncem.scheme import PathGrid, Trajectory, simulate_path
from truncem.truncation import make_truncation

from conftest import oracle_params


@pytest.fixture
def compat(ref_model):
    return make_truncation(ref_model, paper_compat=True)


def _traj(xs, t_end=1.0):
    xs = np.asarray(xs, float)
    return Trajectory(np.linspace(0, t_end, len(xs)), xs, np.ones_like(xs))


def test_payoff_rules():
    spec = BarrierOptionSpec(strike=0.5, barrier=2.0, expiry=1.0)
    assert payoff_path(_traj([0.2, 1.0, 1.5]), spec) == 1.0
    assert payoff_path(_traj([0.2, 2.0, 1.5]), spec) == 0.0  # touching the barrier knocks out
    assert payoff_path(_traj([0.2, 0.3, 0.4]), spec) == 0.0
    with pytest.raises(ConstraintError) as exc:
        payoff_path(_traj([0.2, 0.3], t_end=2.0), spec)
    assert exc.value.constraint == "horizon_matches_expiry"


@given(st.lists(st.floats(0.0, 5.0), min_size=2, max_size=30), st.floats(0.01, 3.0), st.floats(0.01, 5.0))
def test_payoff_bounds(xs, strike, barrier):
    spec = BarrierOptionSpec(strike, barrier, 1.0)
    pay, knocked = payoffs(np.array([xs]), spec)
    assert 0.0 <= pay[0] <= max(barrier - strike, 0.0)
    assert knocked[0] == (max(xs) >= barrier)


def test_spec_validation():
    with pytest.raises(ConstraintError):
        BarrierOptionSpec(0.0, 2.0, 1.0)
    with pytest.raises(ConstraintError):
        BarrierOptionSpec(0.2, 2.0, 0.0)
    with pytest.raises(ConstraintError):
        BarrierOptionSpec(0.2, math.inf, 1.0)


def test_trivial_prices(ref_model, compat):
    ens = EnsembleConfig(500, 1, 1.0)
    tc = compat(2.0 ** -8)
    far = price(BarrierOptionSpec(1e6, 2e6, 1.0), ens, ref_model, tc)
    assert far.price == 0.0 and far.stderr == 0.0
    low = price(BarrierOptionSpec(0.1, ref_model.x0, 1.0), ens, ref_model, tc)
    assert low.price == 0.0 and low.knockout_fraction == 1.0


def test_coupled_monotonicity(ref_model, compat):
    ens = EnsembleConfig(2000, 4, 1.0)
    tc = compat(2.0 ** -8)
    barriers = [1.2, 1.6, 2.0, 3.0]
    prices = [price(BarrierOptionSpec(0.2, b, 1.0), ens, ref_model, tc).price for b in barriers]
    assert all(a <= b for a, b in zip(prices, prices[1:]))
    strikes = [0.1, 0.3, 0.6, 1.0]
    prices = [price(BarrierOptionSpec(k, 2.0, 1.0), ens, ref_model, tc).price for k in strikes]
    assert all(a >= b for a, b in zip(prices, prices[1:]))


def test_price_matches_pathwise_payoffs(ref_model, compat):
    spec = BarrierOptionSpec(0.2, 2.0, 1.0)
    tc = compat(2.0 ** -8)
    rep = price(spec, EnsembleConfig(20, 9, 1.0), ref_model, tc)
    pays = [payoff_path(simulate_path(PathGrid.sample(9, i, 1.0, 256), tc, ref_model), spec)
            for i in range(20)]
    assert rep.price == pytest.approx(np.mean(pays), rel=1e-14)
    assert rep.stderr == pytest.approx(np.std(pays, ddof=1) / math.sqrt(20), rel=1e-12)


def test_coupling_and_workers(ref_model, compat):
    spec = BarrierOptionSpec(0.2, 2.0, 1.0)
    ens = EnsembleConfig(300, 2, 1.0)
    tc = compat(2.0 ** -8)
    same = price(spec, ens, ref_model, tc, base_delta=2.0 ** -8)
    plain = price(spec, ens, ref_model, tc)
    assert same == plain
    assert price(spec, ens, ref_model, tc, 2.0 ** -10, workers=2) == price(spec, ens, ref_model, tc, 2.0 ** -10)
    with pytest.raises(ConstraintError) as exc:
        price(spec, ens, ref_model, tc, base_delta=3e-3)
    assert exc.value.constraint == "base_delta_divides_delta"


def test_discounting(ref_model, compat):
    ens = EnsembleConfig(300, 2, 1.0)
    tc = compat(2.0 ** -8)
    a = price(BarrierOptionSpec(0.2, 2.0, 1.0), ens, ref_model, tc)
    b = price(BarrierOptionSpec(0.2, 2.0, 1.0, discount_rate=0.05), ens, ref_model, tc)
    assert b.price == pytest.approx(a.price * math.exp(-0.05), rel=1e-14)


def test_deterministic_limit():
    p = oracle_params(sigma1=0.0, rho=2.0, x0=0.1)
    tc = make_truncation(p, 2.0 ** -9)
    rep = price(BarrierOptionSpec(0.2, 2.0, 1.0), EnsembleConfig(10, 1, 1.0), p, tc)
    x = p.x0
    for _ in range(512):
        x += p.alpha1 * (p.mu1 - x * x) * 2.0 ** -9
    assert rep.price == pytest.approx(x - 0.2, rel=1e-13) and rep.stderr == 0.0


def test_price_csv_round_trip():
    rep = PriceReport(0.1, 0.01, 100, 0.25)
    text = rep.to_csv()
    assert text.splitlines()[0] == "price,stderr,n_paths,knockout_fraction"
    assert PriceReport.from_csv(text) == rep
