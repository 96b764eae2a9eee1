"""INI pipeline configuration with a fixed schema.

Every section and key is listed in ``SCHEMA``; anything else is rejected.
Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .demand import MPGE
from .forecaster import TrainConfig
from .scheduler import PlantConfig, Tariff


class ConfigError(ValueError):
    pass


# section -> key -> (type, default); default None means optional/absent
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "paths": {
        "trips": (str, None),
        "monthlies": (str, None),
        "output_dir": (str, "out"),
        "forecast": (str, None),
    },
    "schema": {
        "pickup": (str, "pickup_datetime"),
        "dropoff": (str, "dropoff_datetime"),
        "distance": (str, "trip_distance"),
        "delimiter": (str, ","),
    },
    "ingest": {
        "start_date": (date, None),
        "end_date": (date, None),
    },
    "demand": {
        "mpge": (float, MPGE),
    },
    "plant": {
        "h_max_kg": (float, None),
        "h_min_fraction": (float, 0.10),
        "g_kg_per_kwh": (float, 1.0 / 55.0),
        "e_max_kwh": (float, None),
        "h_initial_fraction": (float, 1.0),
    },
    "tariff": {
        "peak_start_hour": (int, 7),
        "peak_end_hour": (int, 20),
        "summer_peak_cents": (float, 27.61),
        "other_peak_cents": (float, 13.60),
        "off_peak_cents": (float, 1.01),
    },
    "rnn": {
        "n_hidden": (int, 5),
        "depth": (int, 4),
        "tau": (int, 96),
        "stride": (int, 24),
    },
    "train": {
        "learning_rate": (float, 0.5),
        "max_iterations": (int, 1000),
        "patience": (int, 30),
        "clip_norm": (float, 5.0),
    },
    "run": {
        "seed": (int, 0),
    },
}


@dataclass
class PipelineConfig:
    values: dict[str, dict[str, object]]
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def path(self, key: str) -> Path | None:
        raw = self.values["paths"][key]
        if raw is None:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    def require_path(self, key: str) -> Path:
        p = self.path(key)
        if p is None:
            raise ConfigError(f"[paths] {key} is required for this command")
        if not p.exists():
            raise ConfigError(f"[paths] {key}: {p} does not exist")
        return p

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def schema_map(self) -> dict[str, str]:
        s = self.values["schema"]
        return {"pickup": s["pickup"], "dropoff": s["dropoff"], "distance": s["distance"]}

    def tariff(self) -> Tariff:
        t = self.values["tariff"]
        try:
            return Tariff(
                peak_start_hour=t["peak_start_hour"],
                peak_end_hour=t["peak_end_hour"],
                summer_peak=t["summer_peak_cents"],
                other_peak=t["other_peak_cents"],
                off_peak=t["off_peak_cents"],
            )
        except ValueError as exc:
            raise ConfigError(f"[tariff] {exc}") from None

    def plant(self) -> PlantConfig:
        p = self.values["plant"]
        for key in ("h_max_kg", "e_max_kwh"):
            if p[key] is None:
                raise ConfigError(f"[plant] {key} is required for scheduling")
        if not 0 <= p["h_min_fraction"] < 1:
            raise ConfigError("[plant] h_min_fraction must lie in [0, 1)")
        try:
            return PlantConfig(
                h_max=p["h_max_kg"],
                e_max=p["e_max_kwh"],
                h_min=p["h_min_fraction"] * p["h_max_kg"],
                g=p["g_kg_per_kwh"],
            )
        except ValueError as exc:
            raise ConfigError(f"[plant] {exc}") from None

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        try:
            return TrainConfig(
                learning_rate=t["learning_rate"],
                max_iterations=t["max_iterations"],
                patience=t["patience"],
                clip_norm=t["clip_norm"],
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from None


def _convert(section: str, key: str, kind: type, raw: str):
    try:
        if kind is date:
            return date.fromisoformat(raw)
        if kind is str:
            return raw
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        base = path.resolve().parent

    values: dict[str, dict[str, object]] = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key [{section}] {key}")
            kind = SCHEMA[section][key][0]
            values[section][key] = _convert(section, key, kind, raw.strip())
    for (section, key), value in (overrides or {}).items():
        values[section][key] = value

    for section, key in (("demand", "mpge"),):
        if not values[section][key] > 0:
            raise ConfigError(f"[{section}] {key} must be positive")
    rnn = values["rnn"]
    if min(rnn["n_hidden"], rnn["tau"], rnn["stride"]) < 1 or rnn["depth"] < 0:
        raise ConfigError("[rnn] n_hidden, tau, stride must be >= 1 and depth >= 0")
    cfg = PipelineConfig(values, base)
    for key in ("trips", "monthlies", "forecast"):
        p = cfg.path(key)
        if p is not None and not p.exists():
            raise ConfigError(f"[paths] {key}: {p} does not exist")
    return cfg
