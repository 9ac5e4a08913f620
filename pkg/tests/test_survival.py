import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfc

from dpkm.errors import FitError, ParameterError
from dpkm.survival import (
    SurvivalCurve,
    SurvivalDataset,
    TimeGrid,
    WeibullParams,
    build_grid,
    kaplan_meier,
    log_rank_test,
    weibull_fit,
    weibull_survival,
)
from oracles import hypergeom_logrank, km_bruteforce


def ds(pairs):
    return SurvivalDataset.from_records(pairs)


# --- containers --------------------------------------------------------------

def test_dataset_rejects_negative_or_nonfinite_times():
    with pytest.raises(ParameterError):
        SurvivalDataset([-1.0], [True])
    with pytest.raises(ParameterError):
        SurvivalDataset([math.inf], [True])


def test_dataset_arrays_are_read_only():
    d = ds([(1, True), (2, False)])
    with pytest.raises(ValueError):
        d.times[0] = 5.0


def test_grid_validation():
    with pytest.raises(ParameterError):
        TimeGrid([1.0])
    with pytest.raises(ParameterError):
        TimeGrid([1.0, 1.0])
    with pytest.raises(ParameterError):
        TimeGrid([0.0, 1.0])


def test_curve_length_must_match_grid():
    with pytest.raises(ParameterError):
        SurvivalCurve(TimeGrid([1, 2]), [1.0])


# --- grid --------------------------------------------------------------------

def test_grid_lung_size():
    g = build_grid(228, 0.40, 100, 1022.0)
    assert g.K == 92
    assert g.points[-1] == 1022.0
    assert np.allclose(np.diff(g.points), 1022.0 / 92)


def test_grid_small_and_capped():
    assert np.array_equal(build_grid(10, 1.0, 100, 10.0).points, np.arange(1, 11.0))
    assert build_grid(1000, 0.40, 100, 500.0).K == 100


def test_grid_clamped_below_at_two():
    assert build_grid(1, 0.1, 100, 5.0).K == 2


@pytest.mark.parametrize("rho", [0.0, -0.1, 1.5])
def test_grid_bad_rho(rho):
    with pytest.raises(ParameterError):
        build_grid(10, rho, 100, 10.0)


def test_grid_bad_tmax():
    with pytest.raises(ParameterError):
        build_grid(10, 0.5, 100, 0.0)


@given(
    n=st.integers(1, 5000),
    rho=st.floats(0.01, 1.0),
    k_max=st.integers(1, 300),
    t_max=st.floats(1e-3, 1e5),
)
def test_grid_properties(n, rho, k_max, t_max):
    g = build_grid(n, rho, k_max, t_max)
    assert np.all(np.diff(g.points) > 0)
    assert g.points[-1] == t_max
    assert g.K == max(min(math.ceil(round(rho * n, 9)), k_max), 2)


# --- Kaplan-Meier ------------------------------------------------------------

def test_km_hand_example():
    c = kaplan_meier(ds([(1, True), (2, False), (3, True)]), TimeGrid([1, 2, 3]))
    assert np.allclose(c.values, [2 / 3, 2 / 3, 0.0], atol=1e-15)


def test_km_all_censored_is_one():
    c = kaplan_meier(ds([(t, False) for t in range(1, 8)]), TimeGrid([0.5, 3, 100]))
    assert np.array_equal(c.values, np.ones(3))


def test_km_empty_raises():
    with pytest.raises(ParameterError):
        kaplan_meier(SurvivalDataset([], []), TimeGrid([1, 2]))


def test_km_right_continuous_at_event_time():
    c = kaplan_meier(ds([(2, True), (4, True)]), TimeGrid([1.999, 2.0, 3.0]))
    assert np.array_equal(c.values, [1.0, 0.5, 0.5])


def test_km_lung_matches_oracle_at_event_times(lung):
    ev = np.unique(lung.times[lung.events])
    grid = TimeGrid(ev)
    got = kaplan_meier(lung, grid).values
    ref = km_bruteforce(lung.times, lung.events, ev)
    assert np.max(np.abs(got - ref)) <= 1e-12


cohorts = st.lists(
    st.tuples(st.integers(0, 15).map(float), st.booleans()), min_size=1, max_size=20
)


@settings(max_examples=200)
@given(cohorts)
def test_km_matches_oracle(pairs):
    d = ds(pairs)
    grid = TimeGrid(np.arange(1, 18) - 0.5)
    ref = km_bruteforce(d.times, d.events, grid.points)
    c = kaplan_meier(d, grid)
    assert np.max(np.abs(c.values - ref)) <= 1e-12
    assert c.is_legal()


@given(cohorts, st.randoms(use_true_random=False))
def test_km_order_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    grid = TimeGrid(np.arange(1, 17.0))
    a = kaplan_meier(ds(pairs), grid).values
    b = kaplan_meier(ds(shuffled), grid).values
    assert np.array_equal(a, b)


@given(st.lists(st.integers(0, 15).map(float), min_size=1, max_size=20))
def test_km_without_censoring_is_empirical_survivor(times):
    grid = TimeGrid(np.arange(1, 17.0))
    c = kaplan_meier(ds([(t, True) for t in times]), grid)
    t = np.asarray(times)
    expected = np.array([(t > g).mean() for g in grid.points])
    assert np.allclose(c.values, expected, atol=1e-12)


# --- Weibull -----------------------------------------------------------------

def test_weibull_fit_recovers_shape_two():
    g = TimeGrid([2, 4, 6, 8])
    curve = weibull_survival(WeibullParams(2.0, 10.0), g)
    p = weibull_fit(curve)
    assert p.shape == pytest.approx(2.0, abs=1e-9)
    assert p.scale == pytest.approx(10.0, abs=1e-9)
    assert np.allclose(weibull_survival(p, g).values, curve.values, atol=1e-9)


def test_weibull_fit_exponential():
    g = TimeGrid([1, 2, 3, 4])
    p = weibull_fit(SurvivalCurve(g, np.exp(-g.points / 5)))
    assert p.shape == pytest.approx(1.0, abs=1e-9)
    assert p.scale == pytest.approx(5.0, abs=1e-9)


def test_weibull_fit_flat_curve_fails():
    with pytest.raises(FitError):
        weibull_fit(SurvivalCurve(TimeGrid([1, 2, 3]), [1, 1, 1]))


def test_weibull_fit_single_eligible_point_fails():
    with pytest.raises(FitError):
        weibull_fit(SurvivalCurve(TimeGrid([1, 2, 3]), [1.0, 0.5, 0.0]))


def test_weibull_fit_increasing_hazard_sign_error():
    # S rising in t on the eligible points gives a negative slope
    with pytest.raises(FitError):
        weibull_fit(SurvivalCurve(TimeGrid([1, 2]), [0.2, 0.8]))


def test_weibull_survival_values():
    assert weibull_survival(WeibullParams(1, 1), TimeGrid([math.log(2), 1.0])).values[0] == pytest.approx(0.5)
    assert weibull_survival(WeibullParams(2, 10), TimeGrid([10, 20])).values[0] == pytest.approx(math.exp(-1))


def test_weibull_params_positive():
    with pytest.raises(ParameterError):
        WeibullParams(0.0, 1.0)
    with pytest.raises(ParameterError):
        WeibullParams(1.0, -3.0)


@given(st.floats(0.3, 5.0), st.floats(1.0, 1000.0))
def test_weibull_round_trip(k, lam):
    g = TimeGrid(np.linspace(lam / 4, lam * 1.5, 12))
    curve = weibull_survival(WeibullParams(k, lam), g)
    p = weibull_fit(curve)
    assert np.allclose(weibull_survival(p, g).values, curve.values, atol=1e-9)


# --- log-rank ----------------------------------------------------------------

def test_logrank_identical_samples():
    a = ds([(1, True), (3, False), (4, True), (7, True)])
    r = log_rank_test(a, a)
    assert r.statistic == pytest.approx(0.0, abs=1e-15)
    assert r.p_value == pytest.approx(1.0, abs=1e-12)


def test_logrank_hand_fixture():
    # pooled event times 1..4: O=2, E=1/2+1/3, V=1/4+2/9
    a = ds([(1, True), (2, True)])
    b = ds([(3, True), (4, True)])
    r = log_rank_test(a, b)
    assert r.observed == 2
    assert r.expected == pytest.approx(5 / 6, abs=1e-12)
    assert r.variance == pytest.approx(17 / 36, abs=1e-12)
    assert r.statistic == pytest.approx(49 / 17, abs=1e-9)
    assert r.p_value == pytest.approx(erfc(math.sqrt(49 / 34)), abs=1e-9)


def test_logrank_no_events_is_degenerate():
    a = ds([(1, False), (2, False)])
    r = log_rank_test(a, ds([(3, False)]))
    assert r.degenerate and r.statistic == 0.0 and r.p_value == 1.0


def test_logrank_empty_sample_raises():
    with pytest.raises(ParameterError):
        log_rank_test(ds([(1, True)]), SurvivalDataset([], []))


@settings(max_examples=150)
@given(cohorts, cohorts)
def test_logrank_symmetric_and_matches_oracle(pa, pb):
    a, b = ds(pa), ds(pb)
    r1, r2 = log_rank_test(a, b), log_rank_test(b, a)
    assert r1.statistic == pytest.approx(r2.statistic, rel=1e-9, abs=1e-12)
    assert r1.p_value == pytest.approx(r2.p_value, rel=1e-9, abs=1e-12)
    assert r1.statistic >= 0 and 0 <= r1.p_value <= 1
    O, E, V = hypergeom_logrank(pa, pb)
    if V > 1e-12:
        assert r1.statistic == pytest.approx((O - E) ** 2 / V, rel=1e-9, abs=1e-12)


def test_weibull_fit_near_flat_curve_is_fit_error():
    # slope ~1e-16 sends the scale past float range
    v = np.full(30, 0.5)
    v[0] = 0.5 + 1e-15
    with pytest.raises(FitError):
        weibull_fit(SurvivalCurve(TimeGrid(np.arange(1, 31.0)), v))
