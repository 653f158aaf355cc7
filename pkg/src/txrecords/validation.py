"""Out-of-sample evaluation: ROC/AUC, record streaks, concurrence and grid maps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _mc
from .data import (ATTRIBUTES, CORNERS, LEVELS, CovariateTable, GeoField, geo_column)
from .glm import GlmFit, predict_prob

log = logging.getLogger(__name__)

STREAK_CATEGORIES = ("1", "2", "3", "4", "5+")
COASTAL_KM = 50.0


# --------------------------------------------------------------------------- #
# Temporal split and ROC
# --------------------------------------------------------------------------- #

def temporal_split(table: CovariateTable, train_len: int = 51) -> tuple[np.ndarray, np.ndarray]:
    """Masks of training years 1..train_len and the remaining test years."""
    T = len(table.years)
    if T < train_len + 1:
        raise ValueError(f"need at least {train_len + 1} years for a {train_len}-year training period, got {T}")
    train = table.t <= train_len
    return train, ~train


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending; the curve starts at +inf
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    n_pos: int
    n_neg: int

    def threshold_at_fpr(self, fpr: float) -> float:
        """Lowest score threshold whose false positive rate stays within ``fpr``."""
        ok = np.flatnonzero(self.fpr <= fpr + 1e-15)
        return float(self.thresholds[ok[-1]])


def roc_auc(probs, labels) -> RocCurve:
    """Exact empirical ROC over every distinct score; AUC by the trapezoid rule.

    The AUC is accumulated in integers, so it equals the Mann-Whitney
    statistic with ties counted one half.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if probs.shape != labels.shape:
        raise ValueError("probs and labels differ in length")
    P = int(labels.sum())
    N = len(labels) - P
    if P == 0 or N == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-probs, kind="mergesort")
    s, l = probs[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.r_[0, np.cumsum(l, dtype=np.int64)[last]]
    fp = np.r_[0, np.cumsum(~l, dtype=np.int64)[last]]
    area2 = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return RocCurve(thresholds=np.r_[np.inf, s[last]], fpr=fp / N, tpr=tp / P,
                    auc=area2 / (2 * P * N), n_pos=P, n_neg=N)


def auc_by_group(probs, labels, station: np.ndarray, dist_coast: Sequence[float],
                 threshold_km: float = COASTAL_KM) -> dict[str, float]:
    """Pooled AUC of coastal (< threshold) and inland stations."""
    coastal_st = np.asarray(dist_coast, dtype=float) < threshold_km
    coastal = coastal_st[np.asarray(station)]
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if not coastal.any():
        raise ValueError("empty coastal group")
    if coastal.all():
        raise ValueError("empty inland group")
    return {"coastal": roc_auc(probs[coastal], labels[coastal]).auc,
            "inland": roc_auc(probs[~coastal], labels[~coastal]).auc}


def station_aucs(probs, labels, station, n_stations: int) -> np.ndarray:
    """Per-station AUC, NaN where a station's test rows hold one class only."""
    out = np.full(n_stations, np.nan)
    for s in range(n_stations):
        m = station == s
        y = labels[m]
        if y.any() and not y.all():
            out[s] = roc_auc(probs[m], y).auc
    return out


# --------------------------------------------------------------------------- #
# Simulation and streaks
# --------------------------------------------------------------------------- #

def simulate_records(probs, n_sim: int, seed: int, start: int = 0) -> np.ndarray:
    """Bernoulli draws ``u < p``, one row per replicate ``start .. start+n_sim-1``.

    Replicate ``r`` depends only on ``(seed, r)``.
    """
    p = np.asarray(probs, dtype=float)
    out = np.empty((n_sim,) + p.shape, dtype=bool)
    for k in range(n_sim):
        out[k] = _mc.replicate_rng(seed, start + k).random(p.shape) < p
    return out


def _segment_breaks(day_offsets) -> np.ndarray:
    """Positions (between day i-1 and i) where the calendar is not contiguous."""
    return np.flatnonzero(np.diff(np.asarray(day_offsets)) != 1) + 1


def run_lengths(series: np.ndarray, day_offsets=None) -> tuple[np.ndarray, np.ndarray]:
    """Maximal runs of ones along the last axis.

    Returns ``(row, length)`` for every run, with ``row`` the flat index over
    the leading axes.  Runs break at gaps in ``day_offsets``.
    """
    x = np.asarray(series, dtype=bool)
    x = x.reshape(-1, x.shape[-1])
    if day_offsets is not None:
        cuts = _segment_breaks(day_offsets)
        if len(cuts):
            x = np.insert(x, cuts, False, axis=1)
    R, L = x.shape
    padded = np.zeros((R, L + 2), dtype=np.int8)
    padded[:, 1:-1] = x
    d = np.diff(padded.ravel())
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return starts // (L + 2), ends - starts


def _category(lengths: np.ndarray) -> np.ndarray:
    return np.minimum(lengths, 5) - 1


@dataclass
class StreakStats:
    per_station: np.ndarray  # (S, 5), NaN rows for stations without records
    mean: np.ndarray
    low: np.ndarray
    high: np.ndarray
    excluded: list[int]


def streak_distribution(series: np.ndarray, day_offsets=None, level: float = 0.95) -> StreakStats:
    """Run-length frequencies over {1, 2, 3, 4, 5+} per station.

    ``series`` has shape (S, years, days).  Frequencies are normalized per
    station and then averaged; stations without any record are excluded.
    """
    x = np.asarray(series, dtype=bool)
    if x.ndim == 2:
        x = x[None]
    S = x.shape[0]
    row, length = run_lengths(x, day_offsets)
    st = row // x.shape[1]
    counts = np.bincount(st * 5 + _category(length), minlength=S * 5).reshape(S, 5).astype(float)
    totals = counts.sum(axis=1)
    excluded = [int(s) for s in np.flatnonzero(totals == 0)]
    if excluded:
        log.warning("%d station(s) without records excluded from streak frequencies", len(excluded))
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = counts / totals[:, None]
    freq[totals == 0] = np.nan
    ok = totals > 0
    if not ok.any():
        raise ValueError("no records in any station")
    a = (1 - level) / 2
    lo, hi = np.quantile(freq[ok], [a, 1 - a], axis=0)
    return StreakStats(per_station=freq, mean=freq[ok].mean(axis=0), low=lo, high=hi,
                       excluded=excluded)


def _streak_block(start, stop, seed, probs, day_offsets):
    sims = simulate_records(probs, stop - start, seed, start)  # (b, S, Y, L)
    b, S = sims.shape[:2]
    row, length = run_lengths(sims, day_offsets)
    rs = row // sims.shape[2]  # replicate * S + station
    counts = np.bincount(rs * 5 + _category(length), minlength=b * S * 5).reshape(b, S, 5).astype(float)
    totals = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, counts / totals, np.nan)


@dataclass
class StreakTable:
    categories: tuple[str, ...]
    observed_mean: np.ndarray
    observed_low: np.ndarray
    observed_high: np.ndarray
    simulated_mean: np.ndarray
    simulated_low: np.ndarray
    simulated_high: np.ndarray
    average_low: np.ndarray
    average_high: np.ndarray
    n_sim: int
    excluded: list[int] = field(default_factory=list)

    def inside(self) -> np.ndarray:
        """Whether each observed mean frequency lies in the simulated interval."""
        return (self.observed_mean >= self.simulated_low) & (self.observed_mean <= self.simulated_high)

    def rows(self) -> list[dict]:
        keys = ["observed_mean", "observed_low", "observed_high", "simulated_mean",
                "simulated_low", "simulated_high", "average_low", "average_high"]
        return [{"category": c, **{k: float(getattr(self, k)[i]) for k in keys}}
                for i, c in enumerate(self.categories)]


def streak_validation(probs: np.ndarray, observed: np.ndarray, n_sim: int = 10_000, seed: int = 0,
                      day_offsets=None, level: float = 0.95, jobs: int = 1) -> StreakTable:
    """Observed streak frequencies against replicates drawn from model probabilities.

    ``probs`` and ``observed`` have shape (S, years, days).  The simulated
    interval pools the station-level frequencies of all replicates; the
    ``average_*`` interval is taken over the replicates' station averages.
    """
    obs = streak_distribution(observed, day_offsets, level)
    p = np.asarray(probs, dtype=float)
    if p.ndim == 2:
        p = p[None]
    freq = np.concatenate(_mc.map_blocks(_streak_block, n_sim, seed, p, day_offsets,
                                         block=100, jobs=jobs))  # (n_sim, S, 5)
    pooled = freq.reshape(-1, 5)
    pooled = pooled[np.isfinite(pooled[:, 0])]
    a = (1 - level) / 2
    lo, hi = np.quantile(pooled, [a, 1 - a], axis=0)
    ok = np.isfinite(freq[..., 0])  # (n_sim, S): replicate produced at least one record
    n_ok = ok.sum(axis=1)
    avg = np.where(ok[..., None], freq, 0.0).sum(axis=1)[n_ok > 0] / n_ok[n_ok > 0, None]
    alo, ahi = np.quantile(avg, [a, 1 - a], axis=0)
    return StreakTable(STREAK_CATEGORIES, obs.mean, obs.low, obs.high, pooled.mean(axis=0),
                       lo, hi, alo, ahi, n_sim=n_sim, excluded=obs.excluded)


# --------------------------------------------------------------------------- #
# Concurrence
# --------------------------------------------------------------------------- #

def _pair_jaccard(x: np.ndarray) -> np.ndarray:
    """Jaccard matrices for a batch of (stations, cells) binary arrays; 0 when the union is empty."""
    xf = x.astype(np.float32)
    inter = np.matmul(xf, np.swapaxes(xf, -1, -2))
    c = xf.sum(axis=-1)
    union = c[..., :, None] + c[..., None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def _concurrence_block(start, stop, seed, probs):
    sims = simulate_records(probs, stop - start, seed, start)
    return _pair_jaccard(sims).astype(float).sum(axis=0)


@dataclass
class ConcurrenceResult:
    station_a: np.ndarray
    station_b: np.ndarray
    observed: np.ndarray
    simulated: np.ndarray
    correlation: float
    n_sim: int

    def rows(self, station_ids: Sequence[str] | None = None) -> list[dict]:
        name = (lambda i: station_ids[i]) if station_ids is not None else int
        return [{"station_a": name(int(a)), "station_b": name(int(b)),
                 "observed_jaccard": float(o), "simulated_jaccard": float(s)}
                for a, b, o, s in zip(self.station_a, self.station_b, self.observed, self.simulated)]


def concurrence_validation(probs: np.ndarray, observed: np.ndarray, n_sim: int = 10_000,
                           seed: int = 0, jobs: int = 1) -> ConcurrenceResult:
    """Observed pairwise Jaccard index against its mean over simulated replicates.

    Inputs have shape (S, cells).  A replicate in which both stations of a
    pair have no record contributes 0 to that pair's mean; observed pairs
    with an empty union are NaN and left out of the correlation.
    """
    obs = np.asarray(observed, dtype=bool).reshape(np.shape(observed)[0], -1)
    p = np.asarray(probs, dtype=float).reshape(obs.shape)
    S = obs.shape[0]
    if np.count_nonzero(obs.any(axis=1)) < 2:
        raise ValueError("need at least two stations with records")
    log.info("simulated pairs with no record in either series count as Jaccard 0")
    sums = _mc.map_blocks(_concurrence_block, n_sim, seed, p, block=50, jobs=jobs)
    sim = np.sum(sums, axis=0) / n_sim
    c = obs.sum(axis=1)
    inter = obs.astype(np.int64) @ obs.T.astype(np.int64)
    union = c[:, None] + c[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        oj = np.where(union > 0, inter / np.where(union > 0, union, 1), np.nan)
    a, b = np.triu_indices(S, k=1)
    o, s = oj[a, b], sim[a, b]
    ok = np.isfinite(o)
    r = float(np.corrcoef(o[ok], s[ok])[0, 1]) if ok.sum() >= 3 else float("nan")
    return ConcurrenceResult(a, b, o, s, r, n_sim)


# --------------------------------------------------------------------------- #
# Spatial maps
# --------------------------------------------------------------------------- #

def grid_frame(field: GeoField, date, surfaces: Mapping[str, np.ndarray] | None = None) -> dict:
    """Covariate frame with one row per grid node treated as a station on that node."""
    date = np.datetime64(date, "D")
    pos = field.date_positions(np.array([date, date - np.timedelta64(1, "D")]))
    if pos[0] < 0:
        raise ValueError(f"date {date} not in field")
    glat, glon = np.meshgrid(field.lats, field.lons, indexing="ij")
    frame: dict[str, np.ndarray] = {"LAT": glat.ravel(), "LON": glon.ravel()}
    for lv in LEVELS:
        k = field.level_index(lv)
        for lag, p in ((False, pos[0]), (True, pos[1])):
            if p < 0:
                continue
            vals = field.values[k, p]
            frame[geo_column(lv, "", lag)] = vals.ravel()
            for lab, lat, lon in CORNERS:
                i, j = field.point_index(lat, lon)
                frame[geo_column(lv, lab, lag)] = np.full(vals.size, vals[i, j])
    for name, surf in (surfaces or {}).items():
        if name not in ATTRIBUTES:
            raise ValueError(f"unknown attribute surface {name!r}")
        frame[name] = np.asarray(surf, dtype=float).ravel()
    return frame


def spatial_predict_grid(fit: GlmFit, field: GeoField, date,
                         surfaces: Mapping[str, np.ndarray] | None = None) -> list[dict]:
    """Record probability at every grid node on ``date``.

    Only latitude and longitude are known at arbitrary nodes; models using
    other station attributes need matching ``surfaces`` (lat x lon arrays).
    """
    frame = grid_frame(field, date, surfaces)
    needed = {t.source for t in fit.terms} | {t.attr for t in fit.terms if t.attr}
    missing = sorted(n for n in needed if n not in frame)
    if missing:
        raise ValueError(f"model references covariates unavailable on the grid: {missing}")
    prob = predict_prob(fit, frame)
    return [{"lat": float(a), "lon": float(b), "prob": float(p)}
            for a, b, p in zip(frame["LAT"], frame["LON"], prob)]


def table_to_cube(table: CovariateTable, values: np.ndarray, fill=0) -> np.ndarray:
    """Scatter row values into a (stations, years, days) array for the table's years."""
    ts = np.unique(table.t)
    S = len(table.station_ids)
    cube = np.full((S, len(ts), len(table.day_offsets)), fill, dtype=np.asarray(values).dtype)
    cube[table.station, np.searchsorted(ts, table.t), table.day - 1] = values
    return cube
