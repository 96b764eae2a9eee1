"""Trip-record parsing, cleaning and quarter-hour aggregation."""

from __future__ import annotations

import csv
import io
import logging
from math import fsum
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import IO, Iterable, Mapping, Sequence

LOGGER = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"
REQUIRED_FIELDS = ("pickup", "dropoff", "distance")
DEFAULT_SCHEMA = {
    "pickup": "pickup_datetime",
    "dropoff": "dropoff_datetime",
    "distance": "trip_distance",
}

MIN_RIDE_HOURS = 1.0 / 60.0
MAX_RIDE_HOURS = 3.0
MAX_SPEED_MPH = 80.0

QUARTER_HEADER = (
    "date",
    "hour",
    "quarter",
    "total_distance_mi",
    "total_ride_time_h",
    "trip_count",
)


class SchemaError(ValueError):
    """A required column is missing from the trip file header."""


@dataclass(frozen=True)
class TripRecord:
    pickup_time: datetime
    dropoff_time: datetime
    trip_distance: float

    @property
    def ride_hours(self) -> float:
        return (self.dropoff_time - self.pickup_time).total_seconds() / 3600.0


@dataclass
class CleaningReport:
    total_read: int = 0
    parse_failures: int = 0
    rejected_by_rule: list[int] = field(default_factory=lambda: [0, 0, 0])
    retained: int = 0
    out_of_range: int = 0

    @property
    def total_rejected(self) -> int:
        return sum(self.rejected_by_rule)

    def reconciles(self) -> bool:
        return self.retained + self.total_rejected + self.parse_failures == self.total_read

    def as_text(self) -> str:
        lines = [
            f"total_read={self.total_read}",
            f"parse_failures={self.parse_failures}",
            f"rejected_rule1_distance={self.rejected_by_rule[0]}",
            f"rejected_rule2_ride_time={self.rejected_by_rule[1]}",
            f"rejected_rule3_speed={self.rejected_by_rule[2]}",
            f"retained={self.retained}",
            f"out_of_range={self.out_of_range}",
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class QuarterRecord:
    date: date
    hour: int
    quarter: int
    total_distance: float = 0.0
    total_ride_time: float = 0.0
    trip_count: int = 0

    @property
    def start(self) -> datetime:
        return datetime(self.date.year, self.date.month, self.date.day, self.hour, 15 * (self.quarter - 1))

    @property
    def month(self) -> str:
        return f"{self.date.year:04d}-{self.date.month:02d}"


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    try:
        return datetime.strptime(text, TIMESTAMP_FORMAT)
    except ValueError:
        # fractional seconds
        return datetime.strptime(text, TIMESTAMP_FORMAT + ".%f")


def parse_trips(
    stream: IO[str] | IO[bytes] | Iterable[str],
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> tuple[list[TripRecord], int]:
    """Parse delimiter-separated trip rows.

    Returns the parsed records in input order and the number of rows that
    were dropped because a field was missing or unparseable, or because the
    dropoff precedes the pickup.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    if isinstance(stream, (io.RawIOBase, io.BufferedIOBase)):
        stream = io.TextIOWrapper(stream, encoding="utf-8", newline="")  # type: ignore[arg-type]

    reader = csv.reader(stream, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("trip file is empty (no header row)") from None

    index = {}
    for key in REQUIRED_FIELDS:
        if key not in schema:
            raise SchemaError(f"schema map has no entry for {key!r}")
        column = schema[key]
        if column not in header:
            raise SchemaError(f"missing required column {column!r} in header")
        index[key] = header.index(column)
    width = max(index.values()) + 1

    records: list[TripRecord] = []
    failures = 0
    for row in reader:
        if not row:
            continue
        if len(row) < width:
            failures += 1
            continue
        try:
            pickup = parse_timestamp(row[index["pickup"]])
            dropoff = parse_timestamp(row[index["dropoff"]])
            distance = float(row[index["distance"]])
        except ValueError:
            failures += 1
            continue
        if dropoff < pickup or not distance >= 0.0 or distance == float("inf"):
            failures += 1
            continue
        records.append(TripRecord(pickup, dropoff, distance))
    return records, failures


def violated_rule(record: TripRecord) -> int:
    """Index (1-3) of the first cleaning rule the record breaks, or 0."""
    if not record.trip_distance > 0.0:
        return 1
    hours = record.ride_hours
    if not MIN_RIDE_HOURS < hours < MAX_RIDE_HOURS:
        return 2
    if not 0.0 < record.trip_distance / hours <= MAX_SPEED_MPH:
        return 3
    return 0


def clean(
    records: Iterable[TripRecord], parse_failures: int = 0
) -> tuple[list[TripRecord], CleaningReport]:
    report = CleaningReport(parse_failures=parse_failures, total_read=parse_failures)
    kept = []
    for rec in records:
        report.total_read += 1
        rule = violated_rule(rec)
        if rule:
            report.rejected_by_rule[rule - 1] += 1
        else:
            kept.append(rec)
    report.retained = len(kept)
    return kept, report


def merge_reports(reports: Iterable[CleaningReport]) -> CleaningReport:
    out = CleaningReport()
    for r in reports:
        out.total_read += r.total_read
        out.parse_failures += r.parse_failures
        out.retained += r.retained
        out.out_of_range += r.out_of_range
        out.rejected_by_rule = [a + b for a, b in zip(out.rejected_by_rule, r.rejected_by_rule)]
    return out


def quarter_key(ts: datetime) -> tuple[date, int, int]:
    return ts.date(), ts.hour, ts.minute // 15 + 1


def group_quarters(
    records: Iterable[TripRecord], start: date, end: date
) -> tuple[list[QuarterRecord], int]:
    """Aggregate trips into every quarter-hour of ``start``..``end`` inclusive.

    A trip lands wholly in the quarter containing its pickup time. Quarters
    without trips are emitted with zero totals. Trips picked up outside the
    range are skipped; their count is returned alongside the records.
    """
    if end < start:
        raise ValueError(f"empty date range {start}..{end}")
    n_days = (end - start).days + 1
    n = n_days * 96
    dist = [[] for _ in range(n)]
    ride = [[] for _ in range(n)]
    skipped = 0
    for rec in records:
        day = (rec.pickup_time.date() - start).days
        if day < 0 or day >= n_days:
            skipped += 1
            continue
        slot = day * 96 + rec.pickup_time.hour * 4 + rec.pickup_time.minute // 15
        dist[slot].append(rec.trip_distance)
        ride[slot].append(rec.ride_hours)

    out = []
    for slot in range(n):
        day, rem = divmod(slot, 96)
        hour, q = divmod(rem, 4)
        out.append(
            QuarterRecord(
                date=start + timedelta(days=day),
                hour=hour,
                quarter=q + 1,
                total_distance=fsum(dist[slot]),
                total_ride_time=fsum(ride[slot]),
                trip_count=len(dist[slot]),
            )
        )
    return out, skipped


def write_quarters(quarters: Sequence[QuarterRecord], stream: IO[str], delimiter: str = ",") -> None:
    writer = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    writer.writerow(QUARTER_HEADER)
    for q in quarters:
        writer.writerow(
            [q.date.isoformat(), q.hour, q.quarter, repr(q.total_distance), repr(q.total_ride_time), q.trip_count]
        )


def read_quarters(stream: IO[str], delimiter: str = ",") -> list[QuarterRecord]:
    reader = csv.DictReader(stream, delimiter=delimiter)
    missing = set(QUARTER_HEADER) - set(reader.fieldnames or ())
    if missing:
        raise SchemaError(f"quarter table missing columns: {', '.join(sorted(missing))}")
    return [
        QuarterRecord(
            date=date.fromisoformat(row["date"]),
            hour=int(row["hour"]),
            quarter=int(row["quarter"]),
            total_distance=float(row["total_distance_mi"]),
            total_ride_time=float(row["total_ride_time_h"]),
            trip_count=int(row["trip_count"]),
        )
        for row in reader
    ]
