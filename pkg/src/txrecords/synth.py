"""Synthetic station panels and geopotential fields with known structure.

Geopotential values at every grid node follow a Gaussian AR(1) process along
the days of each summer (31 May to 31 August), mixed with a domain-wide
common component so that nearby predictors are correlated.  Temperatures are
either drawn directly (stationary, trend and shared-latent generators) or
built backwards from drawn record indicators (logistic-link and Markov
generators) so that the record structure is known exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import (CORNERS, LEVELS, DailyTxPanel, GeoField, StationMeta,
                   nearest_grid_point, write_geofield_csv, write_station_csv)
from .glm import Term, expit
from .records import RecordPanel, record_indicators

KINDS = ("stationary-iid", "linear-trend", "logistic-link", "markov-persistence", "shared-latent")

# Climatological mean and day-to-day sd of geopotential (m2/s2) per level.
LEVEL_MEAN = {700: 31_000.0, 500: 57_500.0, 300: 94_000.0}
LEVEL_SD = {700: 300.0, 500: 600.0, 300: 900.0}
COMMON_SHARE = 0.3

# Centring and scale of station attributes inside the true linear predictor.
ATTRIBUTE_SCALE = {"LAT": ("lat", 40.0, 2.0), "LON": ("lon", -3.0, 3.0),
                   "ALT": ("altitude", 500.0, 300.0), "DIST_COAST": ("dist_coast", 100.0, 100.0)}

DEFAULT_LOGISTIC = {
    "intercept": -2.6,
    "coefficients": {
        "g700.": 0.9,
        "g700..lag1": 0.8,
        "poly(g300.35N.5E,2)": [0.0, 0.6],
        "g500.45N.10W": -0.7,
        "g500.45N.10W:LAT": 0.5,
    },
}
DEFAULT_PARAMS = {
    "stationary-iid": {},
    "linear-trend": {"tx_slope": 0.05, "field_slope": 0.02},
    "logistic-link": DEFAULT_LOGISTIC,
    "markov-persistence": {"p11": 0.3, "p10": 0.05},
    "shared-latent": {"rho": 0.7},
}


@dataclass
class SynthSpec:
    """Generator settings.  ``params`` depends on ``kind``:

    * ``linear-trend``: ``tx_slope`` (degC/year), ``field_slope`` (field sd/year)
    * ``logistic-link``: ``intercept`` and ``coefficients`` keyed by term name,
      acting on standardized covariates (a poly pair takes ``[b1, b2]`` on
      ``z`` and ``z**2 - 1``)
    * ``markov-persistence``: ``p11``, ``p10`` day-to-day transition probabilities
    * ``shared-latent``: ``rho``, loading of every station on one common signal
    """

    kind: str = "stationary-iid"
    T: int = 64
    L: int = 92
    S: int = 36
    seed: int = 0
    first_year: int = 1960
    ar: float = 0.8
    lat_range: tuple[float, float] = (35.0, 45.0)
    lon_range: tuple[float, float] = (-10.0, 5.0)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.T < 2 or self.S < 1 or not 1 <= self.L <= 92:
            raise ValueError("need T >= 2, S >= 1 and 1 <= L <= 92")
        if not -1.0 < self.ar < 1.0:
            raise ValueError("ar must lie in (-1, 1)")
        self.lat_range = tuple(self.lat_range)
        self.lon_range = tuple(self.lon_range)
        merged = dict(DEFAULT_PARAMS[self.kind])
        unknown = sorted(set(self.params) - set(merged))
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {unknown}")
        merged.update(self.params)
        self.params = merged
        if self.kind == "markov-persistence":
            p11, p10 = merged["p11"], merged["p10"]
            if not (0.0 <= p10 <= 1.0 and 0.0 <= p11 <= 1.0) or p10 + (1 - p11) == 0:
                raise ValueError(f"infeasible transition probabilities p11={p11}, p10={p10}")
        if self.kind == "shared-latent" and not 0.0 <= merged["rho"] <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.kind == "logistic-link":
            for name, b in merged["coefficients"].items():
                t = Term.parse(name)
                _check_truth_term(t)
                if len(np.atleast_1d(b)) != t.width:
                    raise ValueError(f"term {name} needs {t.width} coefficient(s)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_truth_term(t: Term) -> None:
    parts = t.source.split(".")
    if not parts[0].startswith("g") or int(parts[0][1:]) not in LEVELS:
        raise ValueError(f"term {t.name} does not reference a geopotential column")
    if t.attr is not None and t.attr not in ATTRIBUTE_SCALE:
        raise ValueError(f"attribute {t.attr} has no synthetic surface")


@dataclass
class SynthDataset:
    spec: SynthSpec
    panel: DailyTxPanel
    field: GeoField
    records: RecordPanel
    probs: np.ndarray | None = None  # true record probability per (t, l, s); t=1 is 1

    @property
    def stations(self) -> tuple[StationMeta, ...]:
        return self.panel.stations

    def write(self, outdir: str | Path) -> dict[str, Path]:
        """Emit the ingestible CSV trio plus the generating spec."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"data": out / "station_data.csv", "meta": out / "station_meta.csv",
                 "geofield": out / "geofield.csv", "spec": out / "synth.json"}
        write_station_csv(self.panel, paths["data"], paths["meta"])
        write_geofield_csv(self.field, paths["geofield"])
        paths["spec"].write_text(json.dumps(self.spec.to_dict(), indent=2) + "\n")
        return paths


def _make_field(spec: SynthSpec, rng: np.random.Generator, years: np.ndarray) -> GeoField:
    lats = np.arange(spec.lat_range[0], spec.lat_range[1] + 0.5)
    lons = np.arange(spec.lon_range[0], spec.lon_range[1] + 0.5)
    n_days = 93  # 31 May .. 31 August
    T = len(years)
    innov = math.sqrt(1.0 - spec.ar ** 2)
    shape = (len(LEVELS), T, len(lats), len(lons))
    common = rng.standard_normal((len(LEVELS), T))
    local = rng.standard_normal(shape)
    z = np.empty((len(LEVELS), T, n_days, len(lats), len(lons)))
    for d in range(n_days):
        if d:
            common = spec.ar * common + innov * rng.standard_normal(common.shape)
            local = spec.ar * local + innov * rng.standard_normal(shape)
        z[:, :, d] = math.sqrt(COMMON_SHARE) * common[..., None, None] + math.sqrt(1 - COMMON_SHARE) * local
    if spec.kind == "linear-trend":
        z += spec.params["field_slope"] * np.arange(T)[None, :, None, None, None]
    mean = np.array([LEVEL_MEAN[lv] for lv in LEVELS])[:, None, None, None, None]
    sd = np.array([LEVEL_SD[lv] for lv in LEVELS])[:, None, None, None, None]
    # keep 31 May plus the L panel days; the draws above do not depend on L
    keep = spec.L + 1
    values = (mean + sd * z[:, :, :keep]).reshape(len(LEVELS), T * keep, len(lats), len(lons))
    starts = np.array([f"{y:04d}-05-31" for y in years], dtype="datetime64[D]")
    dates = (starts[:, None] + np.arange(keep).astype("timedelta64[D]")[None, :]).ravel()
    return GeoField(levels=LEVELS, lats=lats, lons=lons, dates=dates, values=values)


def _make_stations(spec: SynthSpec, rng: np.random.Generator) -> list[dict]:
    out = []
    for s in range(spec.S):
        # alternate coastal (< 50 km) and inland stations so both groups exist
        coast = rng.uniform(1.0, 49.0) if s % 2 == 0 else rng.uniform(60.0, 300.0)
        out.append({
            "station_id": f"S{s + 1:03d}", "name": f"Synthetic {s + 1}",
            "lat": round(float(rng.uniform(36.0, 43.5)), 4),
            "lon": round(float(rng.uniform(-9.0, 3.0)), 4),
            "altitude": round(float(rng.uniform(0.0, 1100.0)), 1),
            "dist_coast": round(float(coast), 2),
            "tx_mean": float(rng.uniform(26.0, 34.0)),
            "tx_sd": float(rng.uniform(2.5, 4.0)),
        })
    return out


def geo_values(gf: GeoField, column: str, years, day_offsets, stations) -> np.ndarray:
    """Values of one geopotential covariate column, shape (T, L, S)."""
    lag = column.endswith(".lag1")
    head, _, loc = column.removesuffix(".lag1").partition(".")
    level = int(head[1:])
    starts = np.array([f"{y:04d}-06-01" for y in years], dtype="datetime64[D]")
    dates = starts[:, None] + np.asarray(day_offsets, dtype="timedelta64[D]")[None, :]
    if lag:
        dates = dates - np.timedelta64(1, "D")
    pos = gf.date_positions(dates.ravel()).reshape(dates.shape)
    if (pos < 0).any():
        raise ValueError(f"field lacks dates for {column}")
    k = gf.level_index(level)
    if loc:
        _, lat, lon = next(c for c in CORNERS if c[0] == loc)
        i, j = gf.point_index(lat, lon)
        return np.repeat(gf.values[k][pos, i, j][:, :, None], len(stations), axis=2)
    idx = [nearest_grid_point(st, gf) for st in stations]
    ii = np.array([p[0] for p in idx])
    jj = np.array([p[1] for p in idx])
    return gf.values[k][pos[:, :, None], ii[None, None, :], jj[None, None, :]]


def true_linear_predictor(spec: SynthSpec, gf: GeoField, years, day_offsets,
                          stations) -> np.ndarray:
    """Linear predictor of the logistic-link generator, shape (T, L, S)."""
    p = spec.params
    eta = np.full((len(years), len(day_offsets), len(stations)), float(p["intercept"]))
    for name, b in p["coefficients"].items():
        t = Term.parse(name)
        level = int(t.source.split(".")[0][1:])
        z = (geo_values(gf, t.source, years, day_offsets, stations) - LEVEL_MEAN[level]) / LEVEL_SD[level]
        b = np.atleast_1d(np.asarray(b, dtype=float))
        contrib = b[0] * z + (b[1] * (z * z - 1.0) if t.poly else 0.0)
        if t.attr is not None:
            fld, centre, scale = ATTRIBUTE_SCALE[t.attr]
            za = (np.array([getattr(st, fld) for st in stations]) - centre) / scale
            contrib = contrib * za[None, None, :]
        eta += contrib
    return eta


def _markov_indicators(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    p11, p10 = spec.params["p11"], spec.params["p10"]
    pi = p10 / (p10 + 1.0 - p11)
    T, L, S = spec.T, spec.L, spec.S
    ind = np.zeros((T, L, S), dtype=np.int8)
    state = rng.random((T, S)) < pi
    ind[:, 0] = state
    for d in range(1, L):
        u = rng.random((T, S))
        state = np.where(state, u < p11, u < p10)
        ind[:, d] = state
    ind[0] = 1
    return ind


def _tx_from_indicators(ind: np.ndarray, base: np.ndarray, sd: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
    """Temperatures whose strict running-maximum records are exactly ``ind``."""
    T, L, S = ind.shape
    tx = np.empty((T, L, S))
    tx[0] = base + sd * rng.standard_normal((L, S))
    running = tx[0].copy()
    for t in range(1, T):
        up = running + 0.1 + rng.exponential(0.8, (L, S))
        down = running - 0.1 - rng.exponential(1.0, (L, S)) * sd
        tx[t] = np.where(ind[t] == 1, up, down)
        running = np.maximum(running, tx[t])
    return tx


def generate(spec: SynthSpec) -> SynthDataset:
    """Build a dataset that is a deterministic function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    years = np.arange(spec.first_year, spec.first_year + spec.T)
    day_offsets = np.arange(spec.L)
    gf = _make_field(spec, rng, years)
    raw = _make_stations(spec, rng)
    base = np.array([r["tx_mean"] for r in raw])
    sd = np.array([r["tx_sd"] for r in raw])
    T, L, S = spec.T, spec.L, spec.S
    probs = None

    if spec.kind in ("stationary-iid", "linear-trend", "shared-latent"):
        eps = rng.standard_normal((T, L, S))
        if spec.kind == "shared-latent":
            rho = spec.params["rho"]
            eps = rho * rng.standard_normal((T, L, 1)) + math.sqrt(1 - rho ** 2) * eps
        tx = base + sd * eps
        if spec.kind == "linear-trend":
            tx += spec.params["tx_slope"] * np.arange(T)[:, None, None]
    else:
        if spec.kind == "markov-persistence":
            ind = _markov_indicators(spec, rng)
        else:
            # stations are needed for the predictor; reference statistics come later
            tmp = [StationMeta(r["station_id"], r["name"], r["lat"], r["lon"], r["altitude"],
                               r["dist_coast"], r["tx_mean"], r["tx_sd"]) for r in raw]
            probs = expit(true_linear_predictor(spec, gf, years, day_offsets, tmp))
            probs[0] = 1.0
            ind = (rng.random((T, L, S)) < probs).astype(np.int8)
            ind[0] = 1
        tx = _tx_from_indicators(ind, base, sd, rng)

    ref = (years >= 1981) & (years <= 2010)
    if ref.sum() < 2:
        ref = np.ones(T, dtype=bool)
    stations = tuple(
        StationMeta(r["station_id"], r["name"], r["lat"], r["lon"], r["altitude"], r["dist_coast"],
                    round(float(tx[ref, :, s].mean()), 4), round(float(tx[ref, :, s].std(ddof=1)), 4))
        for s, r in enumerate(raw)
    )
    panel = DailyTxPanel(years=years, day_offsets=day_offsets, stations=stations, values=tx)
    return SynthDataset(spec=spec, panel=panel, field=gf, records=record_indicators(panel),
                        probs=probs)
