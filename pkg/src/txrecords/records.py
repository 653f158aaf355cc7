"""Calendar-day record indicators and the exploratory record statistics.

Stationary benchmarks rely on the distribution-free facts for iid series: the
record indicators of a series are independent with P(record at t) = 1/t.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _mc
from .data import (DailyTxPanel, GeoField, StationMeta, haversine_km,
                   nearest_grid_point, standardize_reference)
from .smoothing import DEFAULT_SPAN, SmoothedSeries, smoothed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecordPanel:
    """Binary record indicators ``indicators[t, l, s]``; unobserved cells are 0."""

    indicators: np.ndarray
    observed: np.ndarray
    years: np.ndarray
    day_offsets: np.ndarray
    stations: tuple[StationMeta, ...] = ()

    @property
    def shape(self):
        return self.indicators.shape

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.years) - int(self.years[0]) + 1

    def window(self, first_year: int, last_year: int) -> "RecordPanel":
        keep = (self.years >= first_year) & (self.years <= last_year)
        if not keep.any():
            raise ValueError(f"no years in window {first_year}-{last_year}")
        return RecordPanel(self.indicators[keep], self.observed[keep], self.years[keep],
                           self.day_offsets, self.stations)

    def subset(self, station_idx: Sequence[int]) -> "RecordPanel":
        idx = list(station_idx)
        return RecordPanel(self.indicators[:, :, idx], self.observed[:, :, idx], self.years,
                           self.day_offsets, tuple(self.stations[i] for i in idx))


def record_flags(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Strict running-maximum records along axis 0, skipping NaN.

    Returns ``(indicators, observed)``; the first observed value of every
    series is a record.
    """
    values = np.asarray(values, dtype=float)
    observed = np.isfinite(values)
    filled = np.where(observed, values, -np.inf)
    running = np.maximum.accumulate(filled, axis=0)
    prev = np.concatenate([np.full((1,) + values.shape[1:], -np.inf), running[:-1]], axis=0)
    rec = observed & (filled > prev)
    return rec.astype(np.int8), observed


def record_indicators(panel: DailyTxPanel) -> RecordPanel:
    if panel.values.size == 0:
        raise ValueError("empty panel")
    ind, obs = record_flags(panel.values)
    return RecordPanel(ind, obs, np.asarray(panel.years), np.asarray(panel.day_offsets),
                       panel.stations)


@dataclass(frozen=True)
class StationaryBenchmarks:
    t: np.ndarray
    p: np.ndarray
    harmonic: np.ndarray
    no_record: np.ndarray


def stationary_benchmarks(T: int, n: int) -> StationaryBenchmarks:
    """Record probability 1/t, expected record count H_t and P(no record among n) = (1-1/t)^n."""
    if T < 1 or n < 1:
        raise ValueError("T and n must be positive")
    t = np.arange(1, T + 1, dtype=float)
    p = 1.0 / t
    return StationaryBenchmarks(t=t, p=p, harmonic=np.cumsum(p), no_record=(1.0 - p) ** n)


def t_phat(records: RecordPanel, stations: Sequence[int] | None = None) -> np.ndarray:
    """t times the yearly record rate, averaged over stations and days."""
    rp = records if stations is None else records.subset(stations)
    counts = rp.indicators.sum(axis=(1, 2), dtype=float)
    cells = rp.observed.sum(axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(cells > 0, counts / cells, np.nan)
    return rp.t * rate


def t_phat_series(records: RecordPanel, stations: Sequence[int] | None = None,
                  span: float = DEFAULT_SPAN) -> SmoothedSeries:
    raw = t_phat(records, stations)
    return smoothed(records.t.astype(float), raw, span=span)


def transition_counts(records: RecordPanel, t_index: int) -> np.ndarray:
    """2x2 counts ``[[n00, n01], [n10, n11]]`` of (previous day, day) pairs in one year.

    Only consecutive calendar days with both cells observed contribute.
    """
    i = t_index - 1
    ind = records.indicators[i]
    obs = records.observed[i]
    consecutive = np.diff(records.day_offsets) == 1
    prev, cur = ind[:-1][consecutive], ind[1:][consecutive]
    ok = obs[:-1][consecutive] & obs[1:][consecutive]
    prev, cur = prev[ok], cur[ok]
    counts = np.zeros((2, 2))
    np.add.at(counts, (prev.astype(int), cur.astype(int)), 1)
    return counts


def log_odds_ratio(counts: np.ndarray, correction: float = 0.5) -> float:
    (n00, n01), (n10, n11) = np.asarray(counts, dtype=float) + correction
    return math.log((n11 / n10) / (n01 / n00))


def persistence_lor(records: RecordPanel, t_index: int) -> float:
    """Log-odds of a record after a record day versus after a non-record day."""
    return log_odds_ratio(transition_counts(records, t_index))


def lor_series(records: RecordPanel, span: float = DEFAULT_SPAN, first_t: int = 2) -> SmoothedSeries:
    t = records.t
    keep = t >= first_t
    vals = np.array([persistence_lor(records, int(ti)) for ti in t[keep]])
    return smoothed(t[keep].astype(float), vals, span=span)


def daily_record_proportion(records: RecordPanel) -> np.ndarray:
    """Share of observed stations with a record, shape (T, L)."""
    obs = records.observed.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(obs > 0, records.indicators.sum(axis=2) / obs, np.nan)


def no_record_empirical(records: RecordPanel) -> np.ndarray:
    """Per year, the fraction of days on which no station set a record."""
    any_obs = records.observed.any(axis=2)
    none = (records.indicators.sum(axis=2) == 0) & any_obs
    with np.errstate(invalid="ignore", divide="ignore"):
        return none.sum(axis=1) / any_obs.sum(axis=1)


def jaccard_index(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("series differ in length")
    union = np.count_nonzero(a | b)
    if union == 0:
        raise ValueError("Jaccard index undefined for two all-zero series")
    return np.count_nonzero(a & b) / union


def jaccard_pairs(records: RecordPanel) -> list[dict]:
    """Jaccard index and haversine distance for every station pair."""
    S = records.shape[2]
    flat = records.indicators.reshape(-1, S).astype(bool)
    both = records.observed.reshape(-1, S)
    out = []
    for a in range(S):
        for b in range(a + 1, S):
            ok = both[:, a] & both[:, b]
            try:
                j = jaccard_index(flat[ok, a], flat[ok, b])
            except ValueError:
                j = float("nan")
            sa, sb = records.stations[a], records.stations[b]
            out.append({
                "station_a": sa.station_id, "station_b": sb.station_id,
                "distance_km": float(haversine_km(sa.lat, sa.lon, sb.lat, sb.lon)),
                "jaccard": j,
            })
    return out


@dataclass(frozen=True)
class JaccardBand:
    mean: float
    low: float
    high: float
    n_sim: int


def _jaccard_null_block(start, stop, seed, t, L):
    p = 1.0 / t
    out = np.empty(stop - start)
    for k, r in enumerate(range(start, stop)):
        rng = _mc.replicate_rng(seed, r)
        a = rng.random((len(t), L)) < p[:, None]
        b = rng.random((len(t), L)) < p[:, None]
        union = np.count_nonzero(a | b)
        out[k] = np.count_nonzero(a & b) / union if union else np.nan
    return out


def jaccard_null_band(t_first: int, t_last: int, L: int, n_sim: int = 10_000,
                      level: float = 0.95, seed: int = 0, jobs: int = 1) -> JaccardBand:
    """Jaccard index between two independent stationary record series.

    Each year t of the window contributes L independent Bernoulli(1/t)
    record indicators per series. Replicates with no record in either series
    are undefined and skipped.
    """
    if n_sim < 1000:
        raise ValueError("n_sim must be at least 1000")
    if t_first < 1 or t_last < t_first:
        raise ValueError("invalid year window")
    t = np.arange(t_first, t_last + 1, dtype=float)
    js = np.concatenate(_mc.map_blocks(_jaccard_null_block, n_sim, seed, t, L, jobs=jobs))
    js = js[np.isfinite(js)]
    alpha = (1 - level) / 2
    lo, hi = np.quantile(js, [alpha, 1 - alpha])
    return JaccardBand(mean=float(js.mean()), low=float(lo), high=float(hi), n_sim=len(js))


@dataclass(frozen=True)
class NtTest:
    n_records: float
    expected: float
    variance: float
    z: float
    p: float
    p_mc: float | None = None


def _nt_mc_block(start, stop, seed, t_obs):
    # t_obs: 1/t for every observed (t, series) cell in the window
    out = np.empty(stop - start)
    for k, r in enumerate(range(start, stop)):
        rng = _mc.replicate_rng(seed, r)
        out[k] = np.count_nonzero(rng.random(len(t_obs)) < t_obs)
    return out


def nt_record_test(records, t_range: tuple[int, int], observed=None,
                   n_sim: int = 0, seed: int = 0) -> NtTest:
    """Normal test on the total number of records N_t over a window of years.

    ``records`` has shape (T, M): one column per calendar-day series with
    rows indexed by t = 1..T.  Under stationarity the indicators are
    independent Bernoulli(1/t), which gives the mean and variance of N.
    With ``n_sim > 0`` a Monte-Carlo two-sided p-value is added.
    """
    rec = np.asarray(records, dtype=float)
    if rec.ndim == 1:
        rec = rec[:, None]
    obs = np.ones_like(rec, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    if rec.shape[1] < 1:
        raise ValueError("need at least one series")
    t1, t2 = t_range
    if t1 < 2:
        raise ValueError("window must start at t >= 2")
    t2 = min(t2, rec.shape[0])
    if t2 < t1:
        raise ValueError("empty window")
    t = np.arange(t1, t2 + 1, dtype=float)
    win = rec[t1 - 1:t2]
    wobs = obs[t1 - 1:t2]
    p = np.broadcast_to((1.0 / t)[:, None], win.shape)[wobs]
    n = float(win[wobs].sum())
    e = float(p.sum())
    v = float((p * (1 - p)).sum())
    z = (n - e) / math.sqrt(v)
    pval = math.erfc(abs(z) / math.sqrt(2))
    p_mc = None
    if n_sim > 0:
        sims = np.concatenate(_mc.map_blocks(_nt_mc_block, n_sim, seed, p))
        zs = (sims - e) / math.sqrt(v)
        p_mc = (np.count_nonzero(np.abs(zs) >= abs(z) - 1e-12) + 1) / (n_sim + 1)
    return NtTest(n_records=n, expected=e, variance=v, z=z, p=pval, p_mc=p_mc)


def nt_test_station(records: RecordPanel, s: int, t_range: tuple[int, int] | None = None, **kw) -> NtTest:
    T = records.shape[0]
    t_range = t_range or (2, T)
    return nt_record_test(records.indicators[:, :, s], t_range, records.observed[:, :, s], **kw)


def _field_jja(field: GeoField, years, day_offsets) -> np.ndarray:
    """Field values for the panel's JJA cells, shape (levels, T, L, lat, lon)."""
    starts = np.array([f"{y:04d}-06-01" for y in years], dtype="datetime64[D]")
    dates = starts[:, None] + np.asarray(day_offsets, dtype="timedelta64[D]")[None, :]
    pos = field.date_positions(dates.ravel())
    if (pos < 0).any():
        raise ValueError("field lacks dates covered by the panel")
    vals = field.values[:, pos]
    return vals.reshape((len(field.levels), len(years), len(day_offsets)) + vals.shape[2:])


def standardized_trend_panel(panel: DailyTxPanel, field: GeoField, ref: tuple[int, int] = (1981, 2010),
                             span: float = DEFAULT_SPAN) -> dict[str, SmoothedSeries]:
    """Yearly means of spatially averaged standardized Tx and geopotential signals.

    Every station series and every grid-point series is standardized on its
    own reference-period mean and sd before averaging.
    """
    T, L, S = panel.shape
    year_lab = np.repeat(np.asarray(panel.years), L)
    tx = np.stack([standardize_reference(panel.values[:, :, s].ravel(), year_lab, ref)
                   for s in range(S)], axis=1)
    x = np.asarray(panel.years, dtype=float)
    out = {"tx": smoothed(x, np.nanmean(tx, axis=1).reshape(T, L).mean(axis=1), span)}
    geo = _field_jja(field, panel.years, panel.day_offsets)
    for k, lv in enumerate(field.levels):
        g = geo[k].reshape(T * L, -1)
        std = np.stack([standardize_reference(g[:, j], year_lab, ref) for j in range(g.shape[1])], axis=1)
        out[f"g{lv}"] = smoothed(x, std.mean(axis=1).reshape(T, L).mean(axis=1), span)
    return out


def five_number(values) -> dict:
    """Boxplot summary with Tukey whiskers (most extreme points within 1.5 IQR)."""
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        raise ValueError("empty condition class")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return {"n": int(len(v)), "whisker_low": float(lo), "q1": float(q1), "median": float(med),
            "q3": float(q3), "whisker_high": float(hi)}


def conditional_distribution_summary(field: GeoField, records: RecordPanel,
                                     window: tuple[int, int] = (1984, 2023)) -> list[dict]:
    """Nearest-grid-point geopotential split by record / no record, per level."""
    rp = records.window(*window)
    geo = _field_jja(field, rp.years, rp.day_offsets)
    rows = []
    nearest = [nearest_grid_point(st, field) for st in rp.stations]
    for k, lv in enumerate(field.levels):
        vals = np.stack([geo[k][:, :, i, j] for i, j in nearest], axis=2)
        for label, flag in (("record", 1), ("no_record", 0)):
            sel = rp.observed & (rp.indicators == flag)
            summary = five_number(vals[sel])
            rows.append({"level": lv, "condition": label, **summary})
    return rows


def field_record_panel(field: GeoField, years, day_offsets, lat: float, lon: float) -> np.ndarray:
    """Record indicators of one grid point's calendar-day series, shape (levels, T, L)."""
    i, j = field.point_index(lat, lon)
    geo = _field_jja(field, years, day_offsets)[:, :, :, i, j]
    return np.stack([record_flags(geo[k])[0] for k in range(len(field.levels))])
