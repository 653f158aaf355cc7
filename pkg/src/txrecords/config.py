"""Run configuration shared by the command-line subcommands."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """The run configuration violates its schema."""


@dataclass
class RunConfig:
    station_data: str | None = None
    station_meta: str | None = None
    geofield: list[str] = field(default_factory=list)
    unit: str = "m2/s2"
    table: str | None = None
    out_dir: str = "out"
    train_len: int = 51
    z_thresh: float = 2.0
    m_min: int = 12
    k_penalty_prob: float = 0.999
    n_sim: int = 10_000
    seed: int = 0
    jobs: int = 1
    include_m6: bool = False
    region_map: str | None = None

    def __post_init__(self):
        if isinstance(self.geofield, str):
            self.geofield = [self.geofield]
        if self.unit not in ("m2/s2", "m"):
            raise ConfigError(f"unit must be 'm2/s2' or 'm', got {self.unit!r}")
        if self.train_len < 1:
            raise ConfigError("train_len must be positive")
        if self.n_sim < 1:
            raise ConfigError("n_sim must be at least 1")
        if not self.z_thresh > 0 or self.m_min < 1:
            raise ConfigError("z_thresh and m_min must be positive")
        if not 0.0 < self.k_penalty_prob < 1.0:
            raise ConfigError("k_penalty_prob must lie in (0, 1)")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        """Read a JSON config (optional) and apply non-None overrides on top."""
        data: dict[str, Any] = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def out(self) -> Path:
        return Path(self.out_dir)
