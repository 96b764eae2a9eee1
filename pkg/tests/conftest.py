import csv
from datetime import date
from pathlib import Path

import pytest

from h2sched.demand import write_monthlies
from h2sched.synthetic import monthly_aggregates, trip_rows

CONFIG_TEMPLATE = """\
[paths]
trips = trips.csv
monthlies = monthlies.csv
output_dir = out

[schema]
pickup = tpep_pickup_datetime
dropoff = tpep_dropoff_datetime
distance = trip_distance

[plant]
h_max_kg = 6000
e_max_kwh = 40000

[rnn]
tau = 24
stride = 4

[train]
max_iterations = 60
patience = 20

[run]
seed = 3
"""


def write_workspace(root: Path, days: int = 3, seed: int = 0) -> Path:
    """Trip file, monthly report and config for a small end-to-end run."""
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "trips.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["VendorID", "tpep_pickup_datetime", "tpep_dropoff_datetime", "passenger_count", "trip_distance"])
        for pu, do, dist in trip_rows(date(2016, 1, 4), days, seed=seed):
            w.writerow(["2", pu, do, "1", dist])
    with open(root / "monthlies.csv", "w", newline="") as fh:
        write_monthlies(monthly_aggregates(12, noise=0.005, start=(2015, 7), seed=seed), fh)
    (root / "config.ini").write_text(CONFIG_TEMPLATE)
    return root / "config.ini"


@pytest.fixture
def workspace(tmp_path):
    return write_workspace(tmp_path / "ws")
