import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from truncem.errors import ConstraintError
from truncem.montecarlo import (
    EnsembleConfig,
    GapReport,
    MomentReport,
    StrongErrorReport,
    _batch_stats,
    _power_sums,
    estimate_moments,
    estimate_moments_multi,
    estimate_strong_error,
    fit_order,
    interpolation_gap_probe,
    tree_sum,
)
from truncem.truncation import make_truncation

from conftest import mild_params, oracle_params


@pytest.fixture
def compat(ref_model):
    return make_truncation(ref_model, paper_compat=True)


def test_ensemble_constraints():
    with pytest.raises(ConstraintError) as exc:
        EnsembleConfig(1, 0, 1.0)
    assert exc.value.constraint == "n_paths_min"
    with pytest.raises(ConstraintError) as exc:
        EnsembleConfig(10, 0, 1.0, p_moment=1.5)
    assert exc.value.constraint == "p_moment_min"
    with pytest.raises(ConstraintError) as exc:
        EnsembleConfig(10, 0, 1.0, delta_list=(0.01, 0.02))
    assert exc.value.constraint == "delta_list_decreasing"
    with pytest.raises(ConstraintError) as exc:
        EnsembleConfig(10, 0, 1.0, delta_list=(0.01,), delta_ref=0.003)
    assert exc.value.constraint == "delta_ref_divides_t_end"
    with pytest.raises(ConstraintError) as exc:
        EnsembleConfig(10, 0, 1.0, delta_list=(0.25, 0.1), delta_ref=0.125)
    assert exc.value.constraint == "delta_ref_divides_delta_list"


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
def test_tree_sum_matches_fsum(xs):
    assert tree_sum(xs) == pytest.approx(math.fsum(xs), abs=1e-6)


def test_batch_stats_known_values():
    mean, se = _batch_stats([10.0, 20.0], [10, 10])
    assert mean == 1.5
    assert se == pytest.approx(np.std([1.0, 2.0], ddof=1) / math.sqrt(2))


@given(q=st.sampled_from([2.0, 3.0, 4.0, 2.5]))
def test_power_sums(q):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(20, 7))
    ok = np.ones(20, dtype=bool)
    ok[3] = False
    np.testing.assert_allclose(_power_sums(a, ok, q), (np.abs(a[ok]) ** q).sum(axis=0), rtol=1e-13)


def test_deterministic_moments_exact():
    p = oracle_params(sigma1=0.0)
    b = make_truncation(p)
    ens = EnsembleConfig(40, 1, 1.0, 2.0, (2.0 ** -6,))
    rep = estimate_moments(ens, 2.0 ** -6, p, b)
    x = p.x0
    xs = [x]
    for _ in range(64):
        x = x + p.alpha1 * (p.mu1 - x) * 2.0 ** -6
        xs.append(x)
    np.testing.assert_allclose(rep.moment_x, np.square(xs), rtol=1e-14)
    assert np.all(rep.se_x == 0) and np.all(rep.moment_y == 1.0)


def test_delta_must_belong_to_ensemble(ref_model, compat):
    ens = EnsembleConfig(20, 1, 1.0, 2.0, (1e-2,))
    with pytest.raises(ConstraintError) as exc:
        estimate_moments(ens, 1e-3, ref_model, compat)
    assert exc.value.constraint == "delta_in_ensemble"


def test_moments_worker_invariant(ref_model, compat):
    ens = EnsembleConfig(3000, 5, 1.0, 2.0, (1e-2,))
    a = estimate_moments_multi(ens, 1e-2, ref_model, compat, [2, 4], workers=1)
    b = estimate_moments_multi(ens, 1e-2, ref_model, compat, [2, 4], workers=2)
    for q in a:
        assert a[q].to_csv() == b[q].to_csv()
    assert a[2.0].sup_moment_x == np.max(a[2.0].moment_x)


def test_moment_report_csv_round_trip(ref_model, compat, tmp_path):
    ens = EnsembleConfig(200, 5, 1.0, 2.0, (1e-2,))
    rep = estimate_moments(ens, 1e-2, ref_model, compat)
    text = rep.to_csv(tmp_path / "m.csv")
    assert text.splitlines()[0] == "t,moment_x,se_x,moment_y,se_y"
    back = MomentReport.from_csv(tmp_path / "m.csv")
    assert back.to_csv() == text
    assert np.array_equal(back.moment_x, rep.moment_x)


def test_fit_order_synthetic():
    d = 2.0 ** -np.arange(4, 10)
    assert fit_order(d, 3.0 * d ** 0.5) == pytest.approx(0.5)
    assert math.isnan(fit_order(d[:1], [1.0]))


def test_strong_error_report(compat, ref_model):
    ens = EnsembleConfig(60, 2, 1.0, 2.0, (2.0 ** -6, 2.0 ** -7, 2.0 ** -8), 2.0 ** -10)
    rep = estimate_strong_error(ens, ref_model, compat)
    assert np.all(rep.errors > 0) and np.all(np.diff(rep.deltas) < 0)
    assert math.isfinite(rep.fitted_order)
    rep2 = estimate_strong_error(ens, ref_model, compat, workers=2)
    assert rep.to_csv() == rep2.to_csv()
    back = StrongErrorReport.from_csv(rep.to_csv())
    assert back.fitted_order == rep.fitted_order


def test_strong_error_needs_reference(compat, ref_model):
    with pytest.raises(ConstraintError):
        estimate_strong_error(EnsembleConfig(10, 1, 1.0, delta_list=(0.01,)), ref_model, compat)


def test_strong_error_of_deterministic_model():
    # with sigma1 = 0 the error is the gap between two plain Euler recursions
    p = oracle_params(sigma1=0.0)
    b = make_truncation(p)
    ens = EnsembleConfig(10, 1, 1.0, 2.0, (2.0 ** -6,), 2.0 ** -8)
    rep = estimate_strong_error(ens, p, b)

    def euler(n):
        x, out = p.x0, [p.x0]
        for _ in range(n):
            x = x + p.alpha1 * (p.mu1 - x) / n
            out.append(x)
        return np.array(out)

    expected = np.max(np.abs(euler(64) - euler(256)[::4]))
    assert rep.errors[0] == pytest.approx(expected, rel=1e-12)
    assert rep.per_delta_stderr[0] == 0


def test_gap_report(compat, ref_model):
    ens = EnsembleConfig(400, 3, 1.0, 2.0, (2.0 ** -6, 2.0 ** -8))
    rep = interpolation_gap_probe(ens, ref_model, compat)
    assert rep.gap_sup[1] < rep.gap_sup[0]
    assert np.all(rep.gap_mean <= rep.gap_sup)
    np.testing.assert_allclose(rep.bound_scale, [d * (d ** -0.5) ** 2 for d in rep.deltas])
    up = GapReport(np.array([1.0, 0.5]), np.array([1.0, 2.9]), np.array([1, 1]), np.ones(2))
    assert up.bounded() and up.dominated() and up.spread == pytest.approx(2.9)
    down = GapReport(np.array([1.0, 0.5]), np.array([1.0, 0.2]), np.array([1, 1]), np.ones(2))
    assert not down.bounded() and down.dominated()
    assert not GapReport(np.array([1.0, 0.5]), np.array([1.0, 3.1]), np.array([1, 1]), np.ones(2)).dominated()


def test_mild_model_moments_finite():
    p = mild_params()
    ens = EnsembleConfig(500, 1, 1.0, 2.0, (2.0 ** -4,))
    rep = estimate_moments(ens, 2.0 ** -4, p, make_truncation(p))
    assert np.isfinite(rep.moment_x).all() and rep.n_failed == 0
