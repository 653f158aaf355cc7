import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from txrecords import records as rs
from txrecords.data import DailyTxPanel
from txrecords.oracles import brute_force_records

from conftest import make_field, make_station


def _panel(values, years=None):
    values = np.asarray(values, dtype=float)
    T, L, S = values.shape
    years = np.arange(1960, 1960 + T) if years is None else years
    stations = tuple(make_station(f"S{i}", 36 + 0.2 * i, -9 + 0.3 * i) for i in range(S))
    return DailyTxPanel(years, np.arange(L), stations, values)


def _rp(ind, day_offsets=None):
    ind = np.asarray(ind, dtype=np.int8)
    T, L, S = ind.shape
    stations = tuple(make_station(f"S{i}", 36 + 0.2 * i, -9 + 0.3 * i) for i in range(S))
    return rs.RecordPanel(ind, np.ones(ind.shape, dtype=bool), np.arange(1, T + 1),
                          np.arange(L) if day_offsets is None else np.asarray(day_offsets), stations)


def test_record_examples():
    ind, _ = rs.record_flags(np.array([3.0, 5, 4, 6]))
    np.testing.assert_array_equal(ind, [1, 1, 0, 1])
    rp = rs.record_indicators(_panel(np.random.default_rng(0).normal(size=(1, 4, 3))))
    assert rp.indicators.all()


def test_ties_are_not_records():
    ind, _ = rs.record_flags(np.array([5.0, 5.0, 6.0]))
    np.testing.assert_array_equal(ind, [1, 0, 1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.one_of(st.integers(-5, 5).map(float), st.just(float("nan"))), min_size=1, max_size=30))
def test_records_match_rescan(series):
    ind, _ = rs.record_flags(np.array(series))
    assert ind.tolist() == brute_force_records(series)


def test_stationary_benchmarks():
    b = rs.stationary_benchmarks(64, 1)
    assert b.p[-1] == 0.015625
    np.testing.assert_allclose(rs.stationary_benchmarks(4, 1).harmonic, [1, 1.5, 1.8333333, 2.0833333], atol=1e-6)
    assert rs.stationary_benchmarks(2, 1).no_record[1] == 0.5
    with pytest.raises(ValueError):
        rs.stationary_benchmarks(0, 1)


def test_t_phat_examples():
    rp = _rp(np.array([1, 0, 1]).reshape(3, 1, 1))
    np.testing.assert_array_equal(rs.t_phat(rp), [1, 0, 3])
    allrec = _rp(np.ones((4, 2, 3)))
    np.testing.assert_array_equal(rs.t_phat(allrec), [1, 2, 3, 4])


def test_lor_examples():
    counts = np.array([[9, 1], [2, 2]])
    expected = math.log((2.5 / 2.5) / (1.5 / 9.5))
    assert rs.log_odds_ratio(counts) == pytest.approx(expected)
    assert rs.log_odds_ratio(counts) == pytest.approx(1.845, abs=1e-3)
    big = np.array([[9e6, 1e6], [5e6, 5e6]])  # p11 = 0.5, p10 = 0.1
    assert rs.log_odds_ratio(big) == pytest.approx(math.log(9), abs=1e-5)


def test_transition_counts_skip_gaps():
    ind = np.array([1, 1, 0, 1]).reshape(1, 4, 1)
    rp = _rp(ind, day_offsets=[0, 1, 5, 6])
    c = rs.transition_counts(rp, 1)
    # pairs (0,1) and (5,6) only: 1->1 and 0->1
    np.testing.assert_array_equal(c, [[0, 1], [0, 1]])


def test_lor_independent_is_zero():
    rng = np.random.default_rng(5)
    vals = [rs.persistence_lor(_rp((rng.random((1, 92, 36)) < 0.2).astype(np.int8)), 1) for _ in range(300)]
    assert abs(np.mean(vals)) < 0.05


def test_daily_proportion_and_no_record():
    ind = np.zeros((2, 3, 36), dtype=np.int8)
    ind[0] = 1
    ind[1, 0, :9] = 1
    rp = _rp(ind)
    pr = rs.daily_record_proportion(rp)
    assert pr[0].tolist() == [1, 1, 1]
    assert pr[1].tolist() == [0.25, 0, 0]
    np.testing.assert_allclose(rs.no_record_empirical(rp), [0, 2 / 3])


def test_jaccard_examples():
    assert rs.jaccard_index([1, 1, 0], [1, 0, 1]) == pytest.approx(1 / 3)
    assert rs.jaccard_index([1, 0, 1], [1, 0, 1]) == 1
    assert rs.jaccard_index([1, 0, 0], [0, 1, 0]) == 0
    with pytest.raises(ValueError, match="undefined"):
        rs.jaccard_index([0, 0], [0, 0])


def test_jaccard_null_t1_is_one():
    band = rs.jaccard_null_band(1, 1, 92, n_sim=1000)
    assert band.mean == band.low == band.high == 1.0


def test_jaccard_null_worker_independent():
    a = rs.jaccard_null_band(25, 64, 10, n_sim=1000, seed=4, jobs=1)
    b = rs.jaccard_null_band(25, 64, 10, n_sim=1000, seed=4, jobs=2)
    assert a == b


def test_nt_test_exact_expectation():
    # one series of T=2 with a record at t=2 has N = E only if p sums to integer; build a case directly
    rec = np.zeros((4, 12))
    # t=2..4 probabilities 1/2, 1/3, 1/4 over 12 series: E = 6 + 4 + 3 = 13
    rec[1, :6] = 1
    rec[2, :4] = 1
    rec[3, :3] = 1
    res = rs.nt_record_test(rec, (2, 4))
    assert res.expected == pytest.approx(13)
    assert res.z == pytest.approx(0, abs=1e-12)
    assert res.p == pytest.approx(1)
    with pytest.raises(ValueError):
        rs.nt_record_test(rec, (5, 4))


def test_nt_expected_value_full_corpus():
    # E over t=2..64 for 36*92 series: 3312 * (H_64 - 1)
    rec = np.zeros((64, 36 * 92))
    res = rs.nt_record_test(rec, (2, 64))
    H = sum(1 / t for t in range(1, 65))
    assert res.expected == pytest.approx(3312 * (H - 1))


def test_nt_z_is_standard_normal():
    rng = np.random.default_rng(8)
    t = np.arange(1, 65)
    zs = []
    for _ in range(2000):
        rec = rng.random((64, 92)) < (1 / t)[:, None]
        zs.append(rs.nt_record_test(rec, (2, 64)).z)
    assert abs(np.mean(zs)) < 0.06 and abs(np.std(zs) - 1) < 0.05


def test_nt_monte_carlo_pvalue():
    rec = (np.random.default_rng(1).random((30, 20)) < (1 / np.arange(1, 31))[:, None])
    res = rs.nt_record_test(rec, (2, 30), n_sim=2000, seed=3)
    assert 0 < res.p_mc <= 1
    assert abs(res.p_mc - res.p) < 0.1


def test_trend_panel():
    years = np.arange(1975, 2016)
    T, L = len(years), 4
    trend = np.arange(T, dtype=float)[:, None, None]
    noise = np.random.default_rng(0).normal(0, 0.1, (T, L, 2))
    panel = _panel(trend + noise, years)
    gf = make_field(years, n_days=93)
    gf.values[...] += np.repeat(np.arange(T, dtype=float), 93)[None, :, None, None] * 50
    out = rs.standardized_trend_panel(panel, gf)
    assert set(out) == {"tx", "g700", "g500", "g300"}
    for ser in out.values():
        assert np.all(np.diff(ser.smooth) > 0)


def test_trend_panel_constant_field_errors():
    years = np.arange(1980, 1990)
    panel = _panel(np.random.default_rng(0).normal(size=(10, 3, 1)), years)
    gf = make_field(years, values_fn=lambda n, la, lo: np.full((3, n, len(la), len(lo)), 100.0))
    with pytest.raises(ValueError, match="zero reference variance"):
        rs.standardized_trend_panel(panel, gf)


def test_conditional_summary():
    years = np.arange(1984, 1994)
    gf = make_field(years)
    rng = np.random.default_rng(2)
    st0 = make_station("A", 40.0, -3.0)
    i, j = 5, 7
    starts = np.array([f"{y}-06-01" for y in years], dtype="datetime64[D]")
    dates = starts[:, None] + np.arange(4).astype("timedelta64[D]")
    pos = gf.date_positions(dates.ravel()).reshape(10, 4)
    g = gf.values[0][pos, i, j]
    ind = (g > np.median(g)).astype(np.int8)[:, :, None]
    rp = rs.RecordPanel(ind, np.ones_like(ind, dtype=bool), years, np.arange(4), (st0,))
    rows = rs.conditional_distribution_summary(gf, rp, (1984, 1993))
    r700 = {r["condition"]: r for r in rows if r["level"] == 700}
    assert r700["record"]["median"] > r700["no_record"]["median"]
    del rng


def test_five_number_single_value():
    s = rs.five_number([3.5])
    assert s["median"] == s["q1"] == s["whisker_low"] == s["whisker_high"] == 3.5
    with pytest.raises(ValueError):
        rs.five_number([])


def test_jaccard_null_mean_matches_expectation_ratio():
    band = rs.jaccard_null_band(25, 64, 92, n_sim=2000, seed=1)
    t = np.arange(25, 65, dtype=float)
    ratio = np.sum(t ** -2) / np.sum(2 / t - t ** -2)
    assert band.mean == pytest.approx(ratio, rel=0.03)
    assert round(band.mean, 2) == 0.01
