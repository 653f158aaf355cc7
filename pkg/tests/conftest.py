import numpy as np
import pytest

from txrecords.data import LEVELS, DailyTxPanel, GeoField, StationMeta


def make_station(sid="S1", lat=40.0, lon=-3.0, dist_coast=100.0, **kw):
    base = dict(name=sid, altitude=500.0, ref_mean_tx=30.0, ref_sd_tx=3.0)
    base.update(kw)
    return StationMeta(sid, base["name"], lat, lon, base["altitude"], dist_coast,
                       base["ref_mean_tx"], base["ref_sd_tx"])


def make_field(years, values_fn=None, first_day="05-31", n_days=93, seed=0):
    """Full 35-45N x 10W-5E grid over 31 May .. 31 Aug of each year."""
    rng = np.random.default_rng(seed)
    lats = np.arange(35.0, 46.0)
    lons = np.arange(-10.0, 6.0)
    starts = np.array([f"{y:04d}-{first_day}" for y in years], dtype="datetime64[D]")
    dates = (starts[:, None] + np.arange(n_days).astype("timedelta64[D]")).ravel()
    if values_fn is None:
        values = 30000.0 + 300.0 * rng.standard_normal((len(LEVELS), len(dates), len(lats), len(lons)))
    else:
        values = values_fn(len(dates), lats, lons)
    return GeoField(LEVELS, lats, lons, dates, values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_panel():
    years = np.arange(2000, 2006)
    st = (make_station("A", 41.0, -1.0), make_station("B", 38.2, 2.3, dist_coast=10.0))
    values = np.random.default_rng(1).normal(30, 3, size=(len(years), 5, 2))
    return DailyTxPanel(years, np.arange(5), st, values)
