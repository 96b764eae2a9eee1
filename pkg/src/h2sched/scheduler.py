"""Electrolyzer dispatch under a two-tier time-of-use tariff.

Off-peak periods produce as much hydrogen as the tank and electrolyzer
allow; peak periods produce only what keeps the tank at its reserve.
Hydrogen is in kg, energy in kWh per 15-minute period, money in cents.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from datetime import date, datetime
from typing import IO, Sequence

SCHEDULE_HEADER = (
    "timestamp",
    "is_peak",
    "rate_cents_per_kwh",
    "forecast_kg",
    "actual_kg",
    "E_kwh",
    "cost_cents",
    "H_after_kg",
    "shortage_kg",
    "overflow_kg",
)


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class Tariff:
    peak_start_hour: int = 7
    peak_end_hour: int = 20
    summer_start: tuple[int, int] = (6, 1)  # (month, day), inclusive
    summer_end: tuple[int, int] = (9, 30)
    summer_peak: float = 27.61
    other_peak: float = 13.60
    off_peak: float = 1.01

    def __post_init__(self):
        if not (self.summer_peak > self.off_peak and self.other_peak > self.off_peak):
            raise ContractError("peak rates must exceed the off-peak rate")

    def scaled(self, factor: float) -> "Tariff":
        return replace(
            self,
            summer_peak=self.summer_peak * factor,
            other_peak=self.other_peak * factor,
            off_peak=self.off_peak * factor,
        )


@dataclass(frozen=True)
class PlantConfig:
    h_max: float
    e_max: float
    h_min: float | None = None
    g: float = 1.0 / 55.0  # kg per kWh

    def __post_init__(self):
        if self.h_min is None:
            object.__setattr__(self, "h_min", 0.10 * self.h_max)
        if not 0 <= self.h_min < self.h_max:
            raise ContractError(f"need 0 <= h_min < h_max, got h_min={self.h_min}, h_max={self.h_max}")
        if not self.g > 0 or not self.e_max > 0:
            raise ContractError("g and e_max must be positive")


@dataclass(frozen=True)
class DispatchStep:
    timestamp: datetime
    is_peak: bool
    rate: float
    forecast: float
    actual: float
    energy: float
    cost: float
    h_after: float
    shortage: float = 0.0
    overflow: float = 0.0
    reserve_deficit: float = 0.0  # kg the capped peak dispatch could not cover


@dataclass
class Totals:
    cost: float = 0.0
    energy: float = 0.0
    shortage: float = 0.0
    overflow: float = 0.0
    min_storage: float = float("inf")
    max_storage: float = float("-inf")
    shortage_events: int = 0
    overflow_events: int = 0
    deficit_events: int = 0

    def as_text(self, prefix: str = "") -> str:
        items = [
            ("total_cost_cents", self.cost),
            ("total_energy_kwh", self.energy),
            ("total_shortage_kg", self.shortage),
            ("total_overflow_kg", self.overflow),
            ("min_storage_kg", self.min_storage),
            ("max_storage_kg", self.max_storage),
            ("shortage_events", self.shortage_events),
            ("overflow_events", self.overflow_events),
            ("reserve_deficit_events", self.deficit_events),
        ]
        return "".join(f"{prefix}{k}={v!r}\n" for k, v in items)


def is_peak(ts: datetime, tariff: Tariff = Tariff()) -> bool:
    return tariff.peak_start_hour <= ts.hour < tariff.peak_end_hour


def in_summer(d: date, tariff: Tariff = Tariff()) -> bool:
    return tariff.summer_start <= (d.month, d.day) <= tariff.summer_end


def rate(ts: datetime, tariff: Tariff = Tariff()) -> float:
    """Energy price in cents/kWh at ``ts``."""
    if not is_peak(ts, tariff):
        return tariff.off_peak
    return tariff.summer_peak if in_summer(ts.date(), tariff) else tariff.other_peak


def _check(h: float, w: float, plant: PlantConfig) -> None:
    if not 0 <= h <= plant.h_max:
        raise ContractError(f"storage {h} outside [0, {plant.h_max}]")
    if not w >= 0:
        raise ContractError(f"demand forecast {w} must be non-negative")


def offpeak_dispatch(h: float, w: float, plant: PlantConfig) -> float:
    _check(h, w, plant)
    return min(plant.e_max, (plant.h_max + w - h) / plant.g)


def peak_required(h: float, w: float, plant: PlantConfig) -> float:
    """Uncapped energy keeping the tank at reserve."""
    _check(h, w, plant)
    return max(0.0, (plant.h_min + w - h) / plant.g)


def peak_dispatch(h: float, w: float, plant: PlantConfig) -> float:
    return min(plant.e_max, peak_required(h, w, plant))


def step(h: float, energy: float, actual: float, plant: PlantConfig) -> tuple[float, float, float]:
    """Advance storage one period; returns (h_next, shortage, overflow)."""
    raw = float(h + plant.g * energy - actual)
    shortage = max(0.0, -raw)
    overflow = max(0.0, raw - plant.h_max)
    return min(max(raw, 0.0), plant.h_max), shortage, overflow


def _accumulate(totals: Totals, s: DispatchStep) -> None:
    totals.cost += s.cost
    totals.energy += s.energy
    totals.shortage += s.shortage
    totals.overflow += s.overflow
    totals.min_storage = min(totals.min_storage, s.h_after)
    totals.max_storage = max(totals.max_storage, s.h_after)
    totals.shortage_events += s.shortage > 0
    totals.overflow_events += s.overflow > 0
    totals.deficit_events += s.reserve_deficit > 0


def _validate_series(timestamps, *series, plant: PlantConfig, h_initial: float) -> None:
    n = len(timestamps)
    for s in series:
        if len(s) != n:
            raise ContractError(f"series lengths differ: {n} timestamps vs {len(s)} values")
    if not plant.h_min <= h_initial <= plant.h_max:
        raise ContractError(f"initial storage {h_initial} outside [{plant.h_min}, {plant.h_max}]")


def simulate(
    timestamps: Sequence[datetime],
    forecasts: Sequence[float],
    actuals: Sequence[float],
    plant: PlantConfig,
    tariff: Tariff = Tariff(),
    h_initial: float | None = None,
) -> tuple[list[DispatchStep], Totals]:
    """Dispatch on forecasts, settle storage on actual demand."""
    h = float(plant.h_max if h_initial is None else h_initial)
    _validate_series(timestamps, forecasts, actuals, plant=plant, h_initial=h)
    steps, totals = [], Totals()
    for ts, w, d in zip(timestamps, forecasts, actuals):
        w, d = float(w), float(d)
        peak = is_peak(ts, tariff)
        deficit = 0.0
        if peak:
            need = peak_required(h, w, plant)
            energy = min(plant.e_max, need)
            deficit = (need - energy) * plant.g
        else:
            energy = offpeak_dispatch(h, w, plant)
        price = rate(ts, tariff)
        h_next, short, over = step(h, energy, d, plant)
        s = DispatchStep(ts, peak, price, float(w), float(d), energy, energy * price, h_next, short, over, deficit)
        steps.append(s)
        _accumulate(totals, s)
        h = h_next
    return steps, totals


def baseline_jit(
    timestamps: Sequence[datetime],
    actuals: Sequence[float],
    plant: PlantConfig,
    tariff: Tariff = Tariff(),
    h_initial: float | None = None,
) -> tuple[list[DispatchStep], Totals]:
    """Price-blind policy: produce each period's demand as it occurs."""
    h = float(plant.h_max if h_initial is None else h_initial)
    _validate_series(timestamps, actuals, plant=plant, h_initial=h)
    steps, totals = [], Totals()
    for ts, d in zip(timestamps, actuals):
        d = float(d)
        energy = min(plant.e_max, d / plant.g)
        price = rate(ts, tariff)
        h_next, short, over = step(h, energy, d, plant)
        s = DispatchStep(ts, is_peak(ts, tariff), price, float(d), float(d), energy, energy * price, h_next, short, over)
        steps.append(s)
        _accumulate(totals, s)
        h = h_next
    return steps, totals


def percent_savings(optimal: Totals, baseline: Totals) -> float:
    if baseline.cost == 0:
        return 0.0
    return 100.0 * (baseline.cost - optimal.cost) / baseline.cost


def write_schedule(steps: Sequence[DispatchStep], stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SCHEDULE_HEADER)
    for s in steps:
        w.writerow(
            [
                s.timestamp.strftime("%Y-%m-%d %H:%M:%S"),
                int(s.is_peak),
                repr(s.rate),
                repr(s.forecast),
                repr(s.actual),
                repr(s.energy),
                repr(s.cost),
                repr(s.h_after),
                repr(s.shortage),
                repr(s.overflow),
            ]
        )

