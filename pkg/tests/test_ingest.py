import io
from datetime import date, datetime, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2sched.ingest import (
    CleaningReport,
    QuarterRecord,
    SchemaError,
    TripRecord,
    clean,
    group_quarters,
    merge_reports,
    parse_trips,
    read_quarters,
    violated_rule,
    write_quarters,
)

SCHEMA = {"pickup": "pu", "dropoff": "do", "distance": "dist"}
T0 = datetime(2016, 1, 5, 8, 0, 0)


def trip(minutes, miles, start=T0):
    return TripRecord(start, start + timedelta(minutes=minutes), miles)


def test_parse_single_row():
    text = "pu,do,dist\n2016-01-05 08:00:00, 2016-01-05 08:20:00, 3.1\n"
    records, failures = parse_trips(io.StringIO(text), SCHEMA)
    assert failures == 0
    assert records == [TripRecord(datetime(2016, 1, 5, 8), datetime(2016, 1, 5, 8, 20), 3.1)]
    assert records[0].ride_hours == pytest.approx(20 / 60)


def test_parse_empty_distance_counts_failure():
    text = "pu,do,dist\n2016-01-05 08:00:00,2016-01-05 08:20:00,\n"
    records, failures = parse_trips(io.StringIO(text), SCHEMA)
    assert records == [] and failures == 1


def test_parse_three_rows_one_malformed():
    text = (
        "vendor,pu,do,dist,fare\n"
        "1,2016-01-05 08:00:00,2016-01-05 08:20:00,3.1,12\n"
        "1,2016-01-05 08:05:00,not a time,2.0,9\n"
        "2,2016-01-05 09:00:00,2016-01-05 09:12:30,1.25,7\n"
    )
    records, failures = parse_trips(io.BytesIO(text.encode()), SCHEMA)
    assert failures == 1
    assert [r.trip_distance for r in records] == [3.1, 1.25]


def test_parse_rejects_dropoff_before_pickup():
    text = "pu,do,dist\n2016-01-05 08:20:00,2016-01-05 08:00:00,1\n"
    records, failures = parse_trips(io.StringIO(text), SCHEMA)
    assert records == [] and failures == 1


def test_parse_missing_column_is_fatal():
    with pytest.raises(SchemaError, match="'dist'"):
        parse_trips(io.StringIO("pu,do,miles\n"), SCHEMA)


def test_parse_other_delimiter():
    text = "pu;do;dist\n2016-01-05 08:00:00;2016-01-05 08:20:00;3.1\n"
    records, _ = parse_trips(io.StringIO(text), SCHEMA, delimiter=";")
    assert len(records) == 1


@pytest.mark.parametrize(
    "record, rule",
    [
        (trip(12, 0.0), 1),  # 0.2 h, zero distance
        (trip(30, 2.0), 0),  # 4 mph
        (trip(60, 90.0), 3),  # 90 mph
        (trip(1, 0.1), 2),  # exactly 1/60 h is excluded
        (trip(180, 10.0), 2),  # exactly 3 h is excluded
        (trip(60, 80.0), 0),  # exactly 80 mph is kept
        (trip(0.5, 0.0), 1),  # first violated rule wins
    ],
)
def test_violated_rule(record, rule):
    assert violated_rule(record) == rule


def test_clean_report_counts_first_rule():
    records = [trip(12, 0.0), trip(30, 2.0), trip(60, 90.0), trip(0.5, 5.0)]
    kept, report = clean(records, parse_failures=2)
    assert kept == [records[1]]
    assert report.rejected_by_rule == [1, 1, 1]
    assert report.total_read == 6 and report.retained == 1
    assert report.reconciles()


def test_clean_is_idempotent():
    records = [trip(m, d) for m in (0.5, 5, 30, 200) for d in (0, 1, 30, 120)]
    kept, _ = clean(records)
    again, report = clean(kept)
    assert again == kept and report.total_rejected == 0


def test_merge_reports_adds_chunks():
    a = clean([trip(12, 0.0), trip(30, 2.0)], 1)[1]
    b = clean([trip(60, 90.0)], 0)[1]
    merged = merge_reports([a, b])
    assert merged.rejected_by_rule == [1, 0, 1]
    assert merged.total_read == 4 and merged.reconciles()


def test_group_two_trips_same_quarter():
    records = [
        TripRecord(datetime(2016, 1, 5, 8, 0), datetime(2016, 1, 5, 8, 6), 1.0),
        TripRecord(datetime(2016, 1, 5, 8, 10), datetime(2016, 1, 5, 8, 22), 2.0),
    ]
    quarters, skipped = group_quarters(records, date(2016, 1, 5), date(2016, 1, 5))
    q = quarters[8 * 4]
    assert (q.hour, q.quarter, q.trip_count) == (8, 1, 2)
    assert q.total_distance == pytest.approx(3.0)
    assert q.total_ride_time == pytest.approx(0.3)
    assert skipped == 0


def test_group_empty_day_gives_96_zero_quarters():
    quarters, _ = group_quarters([], date(2016, 1, 5), date(2016, 1, 5))
    assert len(quarters) == 96
    assert all(q.trip_count == 0 and q.total_distance == 0 and q.total_ride_time == 0 for q in quarters)
    assert [(q.hour, q.quarter) for q in quarters[:5]] == [(0, 1), (0, 2), (0, 3), (0, 4), (1, 1)]


def test_group_boundary_and_out_of_range():
    late = TripRecord(datetime(2016, 1, 5, 23, 59), datetime(2016, 1, 6, 0, 10), 2.0)
    outside = TripRecord(datetime(2016, 1, 7, 1, 0), datetime(2016, 1, 7, 1, 10), 2.0)
    quarters, skipped = group_quarters([late, outside], date(2016, 1, 5), date(2016, 1, 5))
    assert (quarters[-1].hour, quarters[-1].quarter, quarters[-1].trip_count) == (23, 4, 1)
    assert skipped == 1


def test_quarter_table_roundtrip():
    records = [trip(20, 3.1), trip(9, 1.7, T0 + timedelta(hours=3))]
    quarters, _ = group_quarters(records, date(2016, 1, 5), date(2016, 1, 6))
    buf = io.StringIO()
    write_quarters(quarters, buf)
    assert buf.getvalue().splitlines()[0] == "date,hour,quarter,total_distance_mi,total_ride_time_h,trip_count"
    buf.seek(0)
    assert read_quarters(buf) == quarters


trip_strategy = st.builds(
    lambda day, minute, dur, dist: TripRecord(
        datetime(2016, 3, 1) + timedelta(days=day, minutes=minute),
        datetime(2016, 3, 1) + timedelta(days=day, minutes=minute + dur),
        dist,
    ),
    st.integers(0, 3),
    st.integers(0, 24 * 60 - 1),
    st.floats(0, 240),
    st.floats(0, 150, allow_nan=False),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(trip_strategy, max_size=60))
def test_grouping_conserves_distance_and_counts(records):
    kept, report = clean(records)
    quarters, skipped = group_quarters(kept, date(2016, 3, 1), date(2016, 3, 2))
    in_range = [r for r in kept if r.pickup_time.date() <= date(2016, 3, 2)]
    assert sum(q.trip_count for q in quarters) == report.retained - skipped
    assert sum(q.total_distance for q in quarters) == pytest.approx(
        sum(r.trip_distance for r in in_range), rel=1e-9, abs=1e-12
    )
    assert report.reconciles()
    for q in quarters:
        assert q.total_distance >= 0 and q.total_ride_time >= 0
        if q.trip_count == 0:
            assert q.total_distance == 0 and q.total_ride_time == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(trip_strategy, max_size=60), st.integers(1, 5))
def test_chunked_grouping_matches_single_pass(records, n_chunks):
    kept, _ = clean(records)
    whole, _ = group_quarters(kept, date(2016, 3, 1), date(2016, 3, 4))
    # reversed order stands in for an arbitrary merge order of chunks
    chunks = [kept[i::n_chunks] for i in range(n_chunks)]
    merged = [r for c in reversed(chunks) for r in c]
    assert group_quarters(merged, date(2016, 3, 1), date(2016, 3, 4))[0] == whole
