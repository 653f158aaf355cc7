"""Calendar-day maximum-temperature records: statistics, logistic models and validation."""

from .data import (CovariateTable, DailyTxPanel, GeoField, StationMeta, build_covariate_table,
                   load_geofield, load_station_meta, load_station_panel)
from .records import RecordPanel, record_indicators

__version__ = "0.1.0"

__all__ = [
    "CovariateTable", "DailyTxPanel", "GeoField", "RecordPanel", "StationMeta",
    "build_covariate_table", "load_geofield", "load_station_meta", "load_station_panel",
    "record_indicators",
]
