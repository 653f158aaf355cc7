"""Station panels, geopotential fields and the per-station covariate table.

Longitudes are stored in degrees east with west negative, so the grid label
``45N.10W`` is the point ``(45.0, -10.0)``.  Summer (JJA) days are addressed
by their offset from 1 June, which keeps the calendar date of every cell and
of its one-day lag recoverable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

LEVELS = (700, 500, 300)
JJA_LENGTH = 92
MAX_MISSING_FRACTION = 0.005
EARTH_RADIUS_KM = 6371.0
STANDARD_GRAVITY = 9.80665

# (label, lat, lon) of the four domain corners used as global predictors.
CORNERS = (
    ("45N.10W", 45.0, -10.0),
    ("45N.5E", 45.0, 5.0),
    ("35N.10W", 35.0, -10.0),
    ("35N.5E", 35.0, 5.0),
)
LOCATIONS = ("",) + tuple(c[0] for c in CORNERS)  # "" is the nearest point

# Station attribute columns, keyed by the StationMeta field they come from.
ATTRIBUTES = {
    "LAT": "lat",
    "LON": "lon",
    "ALT": "altitude",
    "DIST_COAST": "dist_coast",
    "TX_MEAN": "ref_mean_tx",
    "TX_SD": "ref_sd_tx",
}


class DataError(ValueError):
    """Input data violates an ingestion contract."""


def geo_column(level: int, location: str = "", lag: bool = False) -> str:
    """Column name for a geopotential covariate, e.g. ``g700.45N.10W.lag1``."""
    name = f"g{level}.{location}"
    return name + ".lag1" if lag else name


GEO_BASE_COLUMNS = tuple(geo_column(lv, loc) for lv in LEVELS for loc in LOCATIONS)
GEO_LAG_COLUMNS = tuple(geo_column(lv, loc, lag=True) for lv in LEVELS for loc in LOCATIONS)


def grid_label(lat: float, lon: float) -> str:
    ew = "W" if lon < 0 else "E"
    return f"{abs(lat):g}N.{abs(lon):g}{ew}"


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance on a sphere of radius 6371 km (broadcasts)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True)
class StationMeta:
    station_id: str
    name: str
    lat: float
    lon: float
    altitude: float
    dist_coast: float
    ref_mean_tx: float
    ref_sd_tx: float

    def __post_init__(self):
        if not 35.0 <= self.lat <= 44.0:
            raise DataError(f"station {self.station_id}: latitude {self.lat} outside [35, 44]")
        if not -10.0 <= self.lon <= 5.0:
            raise DataError(f"station {self.station_id}: longitude {self.lon} outside [-10, 5]")
        if self.dist_coast < 0:
            raise DataError(f"station {self.station_id}: negative coastal distance")
        if not self.ref_sd_tx > 0:
            raise DataError(f"station {self.station_id}: reference sd must be positive")

    def attribute(self, column: str) -> float:
        return float(getattr(self, ATTRIBUTES[column]))


@dataclass(frozen=True)
class DailyTxPanel:
    """Daily maximum temperature, indexed years x summer days x stations.

    ``values[t, l, s]`` is NaN where the observation is missing.
    ``day_offsets`` are days since 1 June (0..91).
    """

    years: np.ndarray
    day_offsets: np.ndarray
    stations: tuple[StationMeta, ...]
    values: np.ndarray

    def __post_init__(self):
        shape = (len(self.years), len(self.day_offsets), len(self.stations))
        if self.values.shape != shape:
            raise DataError(f"panel values have shape {self.values.shape}, expected {shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def t(self) -> np.ndarray:
        """1-based year index (first panel year is t=1)."""
        return np.asarray(self.years) - int(self.years[0]) + 1

    def dates(self) -> np.ndarray:
        """Calendar dates, shape (T, L), as datetime64[D]."""
        starts = np.array([f"{y:04d}-06-01" for y in self.years], dtype="datetime64[D]")
        return starts[:, None] + np.asarray(self.day_offsets, dtype="timedelta64[D]")[None, :]

    def station_index(self, station_id: str) -> int:
        for i, st in enumerate(self.stations):
            if st.station_id == station_id:
                return i
        raise KeyError(station_id)


@dataclass(frozen=True)
class GeoField:
    """Gridded geopotential, ``values[level, date, lat, lon]``."""

    levels: tuple[int, ...]
    lats: np.ndarray
    lons: np.ndarray
    dates: np.ndarray
    values: np.ndarray
    unit: str = "m2/s2"

    def __post_init__(self):
        for axis, name in ((self.lats, "latitude"), (self.lons, "longitude")):
            steps = np.diff(np.asarray(axis, dtype=float))
            if len(axis) > 1 and not np.allclose(steps, 1.0, atol=1e-9):
                raise DataError(f"{name} grid spacing must be exactly 1 degree")
        shape = (len(self.levels), len(self.dates), len(self.lats), len(self.lons))
        if self.values.shape != shape:
            raise DataError(f"field values have shape {self.values.shape}, expected {shape}")

    def level_index(self, level: int) -> int:
        return self.levels.index(level)

    def point_index(self, lat: float, lon: float) -> tuple[int, int]:
        i = np.flatnonzero(np.isclose(self.lats, lat))
        j = np.flatnonzero(np.isclose(self.lons, lon))
        if len(i) == 0 or len(j) == 0:
            raise DataError(f"grid point ({lat}, {lon}) not in field")
        return int(i[0]), int(j[0])

    def date_positions(self, dates: np.ndarray) -> np.ndarray:
        """Index of each date in the field's time axis, -1 where absent."""
        dates = np.asarray(dates, dtype="datetime64[D]")
        pos = np.searchsorted(self.dates, dates)
        pos = np.clip(pos, 0, len(self.dates) - 1)
        found = self.dates[pos] == dates
        return np.where(found, pos, -1)

    def to_height(self) -> "GeoField":
        """Geopotential height in metres (divide by standard gravity)."""
        if self.unit == "m":
            return self
        return GeoField(self.levels, self.lats, self.lons, self.dates,
                        self.values / STANDARD_GRAVITY, unit="m")


@dataclass(frozen=True)
class CovariateTable:
    """One row per (year, day, station) with geopotential and station covariates.

    Rows whose response is missing are absent. Lag columns are NaN on rows
    whose previous calendar day is not in the field (1 June without 31 May).
    """

    t: np.ndarray
    day: np.ndarray
    station: np.ndarray
    columns: dict[str, np.ndarray]
    response: np.ndarray
    station_ids: tuple[str, ...]
    years: np.ndarray
    day_offsets: np.ndarray = field(default_factory=lambda: np.arange(JJA_LENGTH))

    def __len__(self) -> int:
        return len(self.response)

    def select(self, mask: np.ndarray) -> "CovariateTable":
        mask = np.asarray(mask)
        return CovariateTable(
            t=self.t[mask], day=self.day[mask], station=self.station[mask],
            columns={k: v[mask] for k, v in self.columns.items()},
            response=self.response[mask], station_ids=self.station_ids,
            years=self.years, day_offsets=self.day_offsets,
        )

    def complete_rows(self, names: Iterable[str] | None = None) -> np.ndarray:
        """Mask of rows with finite values in every requested column."""
        names = list(self.columns) if names is None else list(names)
        ok = np.ones(len(self), dtype=bool)
        for name in names:
            ok &= np.isfinite(self.columns[name])
        return ok

    def years_mask(self, first_t: int, last_t: int) -> np.ndarray:
        return (self.t >= first_t) & (self.t <= last_t)

    def save(self, path: str | Path) -> None:
        arrays = {f"col:{k}": v for k, v in self.columns.items()}
        np.savez_compressed(
            path, t=self.t, day=self.day, station=self.station, response=self.response,
            station_ids=np.array(self.station_ids), years=self.years,
            day_offsets=self.day_offsets, **arrays,
        )

    @classmethod
    def load(cls, path: str | Path) -> "CovariateTable":
        with np.load(path, allow_pickle=False) as z:
            cols = {k[4:]: z[k] for k in z.files if k.startswith("col:")}
            return cls(t=z["t"], day=z["day"], station=z["station"], columns=cols,
                       response=z["response"], station_ids=tuple(str(s) for s in z["station_ids"]),
                       years=z["years"], day_offsets=z["day_offsets"])


# --------------------------------------------------------------------------- #
# Ingestion
# --------------------------------------------------------------------------- #

META_COLUMNS = ["station_id", "name", "lat", "lon", "altitude", "dist_coast",
                "ref_mean_tx", "ref_sd_tx"]


def load_station_meta(meta_path: str | Path) -> tuple[StationMeta, ...]:
    meta = pd.read_csv(meta_path, dtype={"station_id": str, "name": str})
    missing = [c for c in META_COLUMNS if c not in meta.columns]
    if missing:
        raise DataError(f"metadata missing columns: {missing}")
    if meta["station_id"].duplicated().any():
        raise DataError("duplicate station_id in metadata")
    return tuple(
        StationMeta(str(r.station_id), str(r.name), float(r.lat), float(r.lon),
                    float(r.altitude), float(r.dist_coast), float(r.ref_mean_tx),
                    float(r.ref_sd_tx))
        for r in meta.itertuples(index=False)
    )


def _is_jja(dates: pd.Series) -> np.ndarray:
    return dates.dt.month.isin([6, 7, 8]).to_numpy()


def load_station_panel(path: str | Path, meta_path: str | Path) -> DailyTxPanel:
    """Read ``station_id,date,tx`` observations into a JJA panel.

    The day axis holds every JJA calendar day present in the file and the
    year axis the full range of years observed; absent cells are missing.
    """
    stations = load_station_meta(meta_path)
    order = {st.station_id: i for i, st in enumerate(stations)}
    df = pd.read_csv(path, dtype={"station_id": str})
    for col in ("station_id", "date", "tx"):
        if col not in df.columns:
            raise DataError(f"station data missing column {col!r}")
    unknown = sorted(set(df["station_id"]) - set(order))
    if unknown:
        raise DataError(f"unknown station_id in data: {unknown[:5]}")
    df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d")
    if df.duplicated(["station_id", "date"]).any():
        raise DataError("duplicate observation")
    for sid, grp in df.groupby("station_id", sort=False):
        if not grp["date"].is_monotonic_increasing:
            raise DataError(f"non-monotone dates for station {sid}")

    df = df[_is_jja(df["date"])]
    if df.empty:
        raise DataError("no JJA observations")
    years = np.arange(df["date"].dt.year.min(), df["date"].dt.year.max() + 1)
    june1 = pd.to_datetime(df["date"].dt.year.astype(str) + "-06-01")
    offsets = (df["date"] - june1).dt.days.to_numpy()
    day_offsets = np.unique(offsets)

    values = np.full((len(years), len(day_offsets), len(stations)), np.nan)
    ti = df["date"].dt.year.to_numpy() - years[0]
    li = np.searchsorted(day_offsets, offsets)
    si = df["station_id"].map(order).to_numpy()
    values[ti, li, si] = df["tx"].to_numpy(dtype=float)

    n_cells = len(years) * len(day_offsets)
    for s, st in enumerate(stations):
        frac = np.isnan(values[:, :, s]).sum() / n_cells
        if frac > MAX_MISSING_FRACTION:
            raise DataError(
                f"missing threshold exceeded for station {st.station_id}: {frac:.2%} > 0.5%")
    return DailyTxPanel(years=years, day_offsets=day_offsets, stations=stations, values=values)


def load_geofield(paths: str | Path | Sequence[str | Path], unit: str = "m2/s2") -> GeoField:
    """Read long-format ``level,lat,lon,date,value`` CSV(s) into a GeoField.

    ``unit="m"`` converts geopotential (m2/s2) to geopotential height.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    df = pd.concat([pd.read_csv(p) for p in paths], ignore_index=True)
    for col in ("level", "lat", "lon", "date", "value"):
        if col not in df.columns:
            raise DataError(f"geofield missing column {col!r}")
    dates = pd.to_datetime(df["date"], format="%Y-%m-%d").to_numpy().astype("datetime64[D]")
    levels = tuple(lv for lv in LEVELS if lv in set(df["level"]))
    extra = set(df["level"]) - set(LEVELS)
    if extra:
        raise DataError(f"unsupported pressure levels {sorted(extra)}")
    lats = np.unique(df["lat"].to_numpy(dtype=float))
    lons = np.unique(df["lon"].to_numpy(dtype=float))
    udates = np.unique(dates)
    values = np.full((len(levels), len(udates), len(lats), len(lons)), np.nan)
    li = np.array([levels.index(v) for v in df["level"]]) if len(levels) > 1 else np.zeros(len(df), int)
    values[li, np.searchsorted(udates, dates), np.searchsorted(lats, df["lat"].to_numpy(float)),
           np.searchsorted(lons, df["lon"].to_numpy(float))] = df["value"].to_numpy(float)
    gf = GeoField(levels=levels, lats=lats, lons=lons, dates=udates, values=values)
    if unit == "m":
        return gf.to_height()
    if unit not in ("m2/s2", "m2s2"):
        raise DataError(f"unknown geopotential unit {unit!r}")
    return gf


def write_station_csv(panel: DailyTxPanel, path: str | Path, meta_path: str | Path) -> None:
    """Inverse of :func:`load_station_panel` (missing cells are omitted)."""
    dates = panel.dates()
    T, L, S = panel.shape
    rows = []
    for s, st in enumerate(panel.stations):
        v = panel.values[:, :, s].ravel()
        d = dates.ravel()
        ok = np.isfinite(v)
        rows.append(pd.DataFrame({"station_id": st.station_id, "date": d[ok].astype(str),
                                  "tx": v[ok]}))
    pd.concat(rows, ignore_index=True).to_csv(path, index=False, float_format="%.10g")
    pd.DataFrame([{c: getattr(st, c) for c in META_COLUMNS} for st in panel.stations]).to_csv(
        meta_path, index=False)


def write_geofield_csv(gf: GeoField, path: str | Path) -> None:
    lv, d, la, lo = np.meshgrid(np.arange(len(gf.levels)), np.arange(len(gf.dates)),
                                np.arange(len(gf.lats)), np.arange(len(gf.lons)), indexing="ij")
    vals = gf.values.ravel()
    ok = np.isfinite(vals)
    out = pd.DataFrame({
        "level": np.asarray(gf.levels)[lv.ravel()[ok]],
        "lat": gf.lats[la.ravel()[ok]],
        "lon": gf.lons[lo.ravel()[ok]],
        "date": gf.dates[d.ravel()[ok]].astype(str),
        "value": vals[ok],
    })
    out.to_csv(path, index=False, float_format="%.10g")


# --------------------------------------------------------------------------- #
# Geometry and standardization
# --------------------------------------------------------------------------- #

def nearest_node(lat: float, lon: float, field: GeoField) -> tuple[int, int]:
    """(lat index, lon index) of the grid node closest on the sphere.

    Equidistant nodes resolve to the lower latitude, then the lower longitude.
    """
    if not (field.lats.min() <= lat <= field.lats.max() and field.lons.min() <= lon <= field.lons.max()):
        raise DataError(f"point ({lat}, {lon}) lies outside the grid")
    glat, glon = np.meshgrid(field.lats, field.lons, indexing="ij")
    dist = haversine_km(lat, lon, glat, glon)
    cand = np.argwhere(dist <= dist.min() + 1e-9)
    # argwhere is row-major: first hit has the lowest lat index, then lon index.
    i, j = cand[0]
    return int(i), int(j)


def nearest_grid_point(station: StationMeta, field: GeoField) -> tuple[int, int]:
    try:
        return nearest_node(station.lat, station.lon, field)
    except DataError:
        raise DataError(f"station {station.station_id} lies outside the grid") from None


def standardize_reference(values, years, ref: tuple[int, int] = (1981, 2010)) -> np.ndarray:
    """Anomalies scaled by the mean and sample sd (n-1) of the reference years."""
    values = np.asarray(values, dtype=float)
    years = np.asarray(years)
    in_ref = (years >= ref[0]) & (years <= ref[1])
    sub = values[in_ref]
    sub = sub[np.isfinite(sub)]
    if len(sub) < 2:
        raise DataError(f"reference period {ref[0]}-{ref[1]} not covered by the series")
    sd = sub.std(ddof=1)
    if not sd > 0:
        raise DataError("zero reference variance")
    return (values - sub.mean()) / sd


# --------------------------------------------------------------------------- #
# Covariate table
# --------------------------------------------------------------------------- #

def build_covariate_table(panel: DailyTxPanel, field: GeoField) -> CovariateTable:
    """Assemble the 30 geopotential columns, station attributes and record response."""
    from .records import record_indicators

    rec = record_indicators(panel)
    T, L, S = panel.shape
    dates = panel.dates()
    base_pos = field.date_positions(dates.ravel()).reshape(T, L)
    lag_pos = field.date_positions((dates - np.timedelta64(1, "D")).ravel()).reshape(T, L)
    if (base_pos < 0).any():
        bad = dates[base_pos < 0][0]
        raise DataError(f"missing geopotential for date {bad}")
    # A lag may only be absent when it points at 31 May.
    lag_missing = lag_pos < 0
    prev_in_panel = np.isin(panel.day_offsets - 1, panel.day_offsets)[None, :] & lag_missing
    if prev_in_panel.any():
        raise DataError("missing geopotential for a lag date inside the season")
    if lag_missing.any():
        log.warning("%d year(s) lack 31 May; their 1 June rows have no lag covariates",
                    int(lag_missing[:, 0].sum()) if L else 0)

    nearest = [nearest_grid_point(st, field) for st in panel.stations]
    corner_idx = [field.point_index(lat, lon) for _, lat, lon in CORNERS]

    tt, ll, ss = np.meshgrid(np.arange(T), np.arange(L), np.arange(S), indexing="ij")
    tt, ll, ss = tt.ravel(), ll.ravel(), ss.ravel()
    observed = rec.observed.ravel()
    tt, ll, ss = tt[observed], ll[observed], ss[observed]
    bp = base_pos[tt, ll]
    lp = lag_pos[tt, ll]
    has_lag = lp >= 0
    lp_safe = np.where(has_lag, lp, 0)

    near_i = np.array([p[0] for p in nearest])[ss]
    near_j = np.array([p[1] for p in nearest])[ss]
    columns: dict[str, np.ndarray] = {}
    for lv in LEVELS:
        k = field.level_index(lv)
        vals = field.values[k]
        points = [("", near_i, near_j)] + [(lab, np.full_like(ss, i), np.full_like(ss, j))
                                            for (lab, _, _), (i, j) in zip(CORNERS, corner_idx)]
        for loc, pi, pj in points:
            base = vals[bp, pi, pj]
            lag = np.where(has_lag, vals[lp_safe, pi, pj], np.nan)
            if not np.isfinite(base).all() or not np.isfinite(lag[has_lag]).all():
                raise DataError(f"missing geopotential value in {geo_column(lv, loc)}")
            columns[geo_column(lv, loc)] = base
            columns[geo_column(lv, loc, lag=True)] = lag
    for col in ATTRIBUTES:
        columns[col] = np.array([st.attribute(col) for st in panel.stations])[ss]

    return CovariateTable(
        t=panel.t[tt], day=ll + 1, station=ss, columns=columns,
        response=rec.indicators[tt, ll, ss].astype(np.int8),
        station_ids=tuple(st.station_id for st in panel.stations),
        years=np.asarray(panel.years), day_offsets=np.asarray(panel.day_offsets),
    )
