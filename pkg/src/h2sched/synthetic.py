"""Synthetic inputs for demos and tests: trip files, monthly reports, demand series."""

from __future__ import annotations

import calendar
from datetime import date, datetime, timedelta

import numpy as np

from .demand import MonthlyAggregate
from .ingest import TIMESTAMP_FORMAT


def trip_rows(start: date, days: int, seed: int = 0, mean_per_quarter: float = 6.0, dirty_fraction: float = 0.05):
    """Yield CSV rows (pickup, dropoff, distance) with a daily traffic profile.

    Roughly ``dirty_fraction`` of rows break one cleaning rule or are
    malformed, so every ingest branch is exercised.
    """
    rng = np.random.default_rng(seed)
    for slot in range(days * 96):
        t0 = datetime(start.year, start.month, start.day) + timedelta(minutes=15 * slot)
        hour = t0.hour + t0.minute / 60
        level = mean_per_quarter * (0.35 + 0.65 * np.sin(np.pi * max(hour - 5, 0) / 19) ** 2)
        for _ in range(rng.poisson(level)):
            pickup = t0 + timedelta(seconds=int(rng.integers(0, 900)))
            minutes = float(rng.uniform(4, 45))
            speed = float(rng.uniform(6, 30))
            dist = round(speed * minutes / 60, 2)
            u = rng.random()
            if u < dirty_fraction / 4:
                dist = 0.0
            elif u < dirty_fraction / 2:
                minutes = 0.5
            elif u < 3 * dirty_fraction / 4:
                dist = round(95 * minutes / 60, 2)
            elif u < dirty_fraction:
                yield (pickup.strftime(TIMESTAMP_FORMAT), "", "")
                continue
            dropoff = pickup + timedelta(seconds=round(minutes * 60))
            yield (pickup.strftime(TIMESTAMP_FORMAT), dropoff.strftime(TIMESTAMP_FORMAT), f"{dist:.2f}")


def monthly_aggregates(
    n_months: int = 24,
    a: float = 0.247,
    b1: float = 2e6,
    noise: float = 0.0,
    start: tuple[int, int] = (2015, 1),
    trips_range: tuple[float, float] = (2e6, 2e7),
    seed: int = 0,
) -> list[MonthlyAggregate]:
    """Months whose operating hours follow ``a * trips + b1`` with multiplicative noise."""
    rng = np.random.default_rng(seed)
    trips = rng.uniform(*trips_range, size=n_months).round()
    hours = (a * trips + b1) * (1.0 + noise * rng.standard_normal(n_months))
    out = []
    year, month = start
    for t, h in zip(trips, hours):
        out.append(MonthlyAggregate(f"{year:04d}-{month:02d}", float(t), float(h), calendar.monthrange(year, month)[1]))
        month += 1
        if month > 12:
            year, month = year + 1, 1
    return out


def sinusoid_demand(days: int = 60, mean: float = 100.0, amplitude: float = 50.0, noise: float = 0.01, seed: int = 0) -> np.ndarray:
    """Daily-periodic demand (96 quarters per cycle) with multiplicative noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(days * 96)
    clean = mean + amplitude * np.sin(2 * np.pi * t / 96)
    return clean * (1.0 + noise * rng.standard_normal(t.size))


def random_demand(days: int, rng: np.random.Generator, base: float = 20.0) -> np.ndarray:
    """Non-negative demand with a random daily shape, random level and sparse zeros."""
    t = np.arange(days * 96)
    phase = rng.uniform(0, 2 * np.pi)
    level = base * rng.uniform(0.2, 2.0)
    shape = 1.0 + 0.8 * np.sin(2 * np.pi * t / 96 + phase)
    d = level * shape * rng.uniform(0.5, 1.5, size=t.size)
    d[rng.random(t.size) < 0.05] = 0.0
    return d


def quarter_timestamps(start: datetime, n: int) -> list[datetime]:
    return [start + timedelta(minutes=15 * k) for k in range(n)]
