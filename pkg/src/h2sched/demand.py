"""Hydrogen demand from quarter-hour taxi aggregates.

Demand in a period is distance driven by the estimated fleet divided by
fuel economy. The fleet size comes from a monthly linear regression of
operating taxi-hours on trip counts.
"""

from __future__ import annotations

import calendar
import csv
from datetime import date
from math import fsum
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .ingest import QuarterRecord, SchemaError

MPGE = 30.0  # miles per pound of hydrogen
KG_PER_LB = 0.45359237
PERIOD_HOURS = 0.25
OUTLIER_THRESHOLD = 3.0

MONTHLY_HEADER = ("month", "total_trips", "total_operating_hours", "days_in_month")
DEMAND_HEADER = ("date", "hour", "quarter", "demand_kg", "avg_speed_mph", "est_fleet")


class DataIntegrityError(ValueError):
    pass


class SingularFitError(ValueError):
    pass


@dataclass(frozen=True)
class MonthlyAggregate:
    month: str  # "YYYY-MM"
    total_trips: float
    total_operating_hours: float
    days_in_month: int

    def __post_init__(self):
        if not 28 <= self.days_in_month <= 31:
            raise ValueError(f"{self.month}: days_in_month={self.days_in_month} outside 28..31")
        if self.total_trips < 0 or self.total_operating_hours < 0:
            raise ValueError(f"{self.month}: negative monthly totals")


@dataclass
class FleetFit:
    a: float
    b1: float
    r_squared: float = float("nan")
    months: list[str] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    studentized: list[float] = field(default_factory=list)
    outliers: list[str] = field(default_factory=list)

    def hourly_intercept(self, days_in_month: int) -> float:
        return self.b1 / (days_in_month * 24)

    def as_text(self) -> str:
        return (
            f"a={self.a!r}\n"
            f"b1={self.b1!r}\n"
            f"r_squared={self.r_squared!r}\n"
            f"outliers={','.join(self.outliers)}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "FleetFit":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        try:
            fit = cls(a=float(kv["a"]), b1=float(kv["b1"]), r_squared=float(kv.get("r_squared", "nan")))
        except KeyError as exc:
            raise SchemaError(f"fleet fit file missing {exc.args[0]!r}") from None
        fit.outliers = [m for m in kv.get("outliers", "").split(",") if m]
        return fit


@dataclass(frozen=True)
class DemandPoint:
    record: QuarterRecord
    demand: float  # kg
    avg_speed: float  # mph
    est_fleet: float


def average_speed(q: QuarterRecord) -> float:
    if q.trip_count == 0:
        return 0.0
    if q.total_ride_time <= 0.0:
        raise DataIntegrityError(
            f"{q.date} {q.hour:02d} q{q.quarter}: {q.trip_count} trips with zero ride time"
        )
    return q.total_distance / q.total_ride_time


def fit_fleet(monthlies: Sequence[MonthlyAggregate]) -> FleetFit:
    """OLS of monthly operating taxi-hours on monthly trip totals.

    Residual diagnostics use externally studentized residuals; months with
    ``|t| > 3`` are reported as outliers.
    """
    x = np.array([m.total_trips for m in monthlies], dtype=float)
    y = np.array([m.total_operating_hours for m in monthlies], dtype=float)
    n = x.size
    if n < 2 or np.ptp(x) == 0.0:
        raise SingularFitError("need at least two months with distinct total_trips")

    X = np.column_stack([x, np.ones(n)])
    (a, b1), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ np.array([a, b1])
    sse = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - sse / sst if sst > 0 else 1.0

    studentized = _studentized_residuals(X, resid, y)
    fit = FleetFit(
        a=float(a),
        b1=float(b1),
        r_squared=r2,
        months=[m.month for m in monthlies],
        residuals=resid.tolist(),
        studentized=studentized.tolist(),
    )
    fit.outliers = [m for m, t in zip(fit.months, studentized) if abs(t) > OUTLIER_THRESHOLD]
    return fit


def _studentized_residuals(X: np.ndarray, resid: np.ndarray, y: np.ndarray) -> np.ndarray:
    n, p = X.shape
    if n - p - 1 <= 0:
        return np.zeros(n)
    hat = (np.linalg.qr(X)[0] ** 2).sum(axis=1)
    one_minus_h = np.clip(1.0 - hat, 1e-12, None)
    sse = float(resid @ resid)
    s2_del = (sse - resid**2 / one_minus_h) / (n - p - 1)
    # residuals at rounding level count as exact fits
    tiny = 1e-12 * max(float(np.abs(y).max()), 1.0)
    s2_floor = tiny**2
    out = np.zeros(n)
    for i in range(n):
        if abs(resid[i]) <= tiny:
            continue
        out[i] = resid[i] / np.sqrt(max(s2_del[i], s2_floor) * one_minus_h[i])
    return out


def estimate_fleet(trips_in_hour: float, days_in_month: int, fit: FleetFit) -> float:
    return max(0.0, fit.a * trips_in_hour + fit.hourly_intercept(days_in_month))


def quarter_demand(q: QuarterRecord, fleet: float, mpge: float = MPGE) -> float:
    """Hydrogen (kg) burned in one quarter-hour by ``fleet`` taxis."""
    if not mpge > 0:
        raise ValueError(f"mpge must be positive, got {mpge}")
    pounds = average_speed(q) * fleet * PERIOD_HOURS / mpge
    return pounds * KG_PER_LB


def build_demand_series(
    quarters: Sequence[QuarterRecord],
    monthlies: Sequence[MonthlyAggregate] | Mapping[str, MonthlyAggregate],
    fit: FleetFit,
    mpge: float = MPGE,
) -> list[DemandPoint]:
    """One demand point per quarter, in input order.

    The fleet is estimated once per clock hour from the hour's total trips
    and shared by its four quarters.
    """
    if not isinstance(monthlies, Mapping):
        monthlies = {m.month: m for m in monthlies}

    hourly_trips: dict[tuple, int] = {}
    for q in quarters:
        key = (q.date, q.hour)
        hourly_trips[key] = hourly_trips.get(key, 0) + q.trip_count

    out = []
    for q in quarters:
        agg = monthlies.get(q.month)
        if agg is None:
            raise DataIntegrityError(f"no monthly aggregate for month {q.month}")
        fleet = estimate_fleet(hourly_trips[(q.date, q.hour)], agg.days_in_month, fit)
        out.append(DemandPoint(q, quarter_demand(q, fleet, mpge), average_speed(q), fleet))
    return out


def monthly_demand(series: Iterable[DemandPoint], months: Iterable[str] = ()) -> "OrderedDict[str, float]":
    """Total kg per calendar month; ``months`` pre-seeds months that may be empty."""
    totals: dict[str, list[float]] = {m: [] for m in months}
    for p in series:
        totals.setdefault(p.record.month, []).append(p.demand)
    return OrderedDict((m, fsum(totals[m])) for m in sorted(totals))


def days_in_month(month: str) -> int:
    year, mon = (int(v) for v in month.split("-"))
    return calendar.monthrange(year, mon)[1]


def read_monthlies(stream: IO[str], delimiter: str = ",") -> list[MonthlyAggregate]:
    reader = csv.DictReader(stream, delimiter=delimiter)
    missing = set(MONTHLY_HEADER) - set(reader.fieldnames or ())
    if missing:
        raise SchemaError(f"monthly file missing columns: {', '.join(sorted(missing))}")
    out = []
    for row in reader:
        out.append(
            MonthlyAggregate(
                month=row["month"].strip(),
                total_trips=float(row["total_trips"]),
                total_operating_hours=float(row["total_operating_hours"]),
                days_in_month=int(row["days_in_month"]),
            )
        )
    return out


def write_monthlies(monthlies: Sequence[MonthlyAggregate], stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(MONTHLY_HEADER)
    for m in monthlies:
        w.writerow([m.month, repr(m.total_trips), repr(m.total_operating_hours), m.days_in_month])


def write_demand(series: Sequence[DemandPoint], stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(DEMAND_HEADER)
    for p in series:
        q = p.record
        w.writerow([q.date.isoformat(), q.hour, q.quarter, repr(p.demand), repr(p.avg_speed), repr(p.est_fleet)])


def read_demand(stream: IO[str]) -> list[tuple[QuarterRecord, float]]:
    """Read a demand table back as (quarter stub, kg) pairs."""
    reader = csv.DictReader(stream)
    missing = set(DEMAND_HEADER) - set(reader.fieldnames or ())
    if missing:
        raise SchemaError(f"demand file missing columns: {', '.join(sorted(missing))}")
    return [
        (QuarterRecord(date.fromisoformat(r["date"]), int(r["hour"]), int(r["quarter"])), float(r["demand_kg"]))
        for r in reader
    ]
