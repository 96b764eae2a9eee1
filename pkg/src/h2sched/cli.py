"""Command-line pipeline: ingest -> fit -> demand -> train -> schedule -> report.

Exit codes: 0 success, 2 configuration or precondition error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from . import demand as dm
from . import forecaster as fc
from . import ingest
from . import scheduler as sch
from .config import ConfigError, PipelineConfig, load_config

LOGGER = logging.getLogger("h2sched")

QUARTERS = "quarters.csv"
CLEANING = "cleaning_report.txt"
FIT = "fleet_fit.txt"
RESIDUALS = "fleet_residuals.csv"
DEMAND = "demand.csv"
MONTHLY = "monthly_demand.csv"
MODEL = "model.txt"
HISTORY = "history.csv"
SCHEDULE = "schedule.csv"
TOTALS = "schedule_totals.txt"
REPORT_DIR = "report"

RESIDUAL_HEADER = ("month", "total_trips", "total_operating_hours", "fitted_hours", "residual", "studentized", "outlier")


class PreconditionError(Exception):
    """Maps to exit status 2."""


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _artifact(cfg: PipelineConfig, name: str) -> Path:
    p = cfg.output_dir / name
    if not p.exists():
        raise PreconditionError(f"missing artifact {name} (expected at {p})")
    return p


def cmd_ingest(cfg: PipelineConfig) -> None:
    src = cfg.require_path("trips")
    with open(src, newline="") as fh:
        try:
            records, failures = ingest.parse_trips(fh, cfg.schema_map, cfg.get("schema", "delimiter"))
        except ingest.SchemaError as exc:
            raise PreconditionError(str(exc)) from None
    kept, report = ingest.clean(records, failures)

    start, end = cfg.get("ingest", "start_date"), cfg.get("ingest", "end_date")
    if start is None or end is None:
        if not kept:
            raise PreconditionError("no trips survive cleaning and no [ingest] date range is set")
        days = [r.pickup_time.date() for r in kept]
        start = start or min(days)
        end = end or max(days)
    quarters, report.out_of_range = ingest.group_quarters(kept, start, end)

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / QUARTERS, "w", newline="") as fh:
        ingest.write_quarters(quarters, fh)
    _write_text(out / CLEANING, report.as_text())
    LOGGER.info("ingest: %d read, %d retained, %d quarters", report.total_read, report.retained, len(quarters))


def _read_monthlies(cfg: PipelineConfig) -> list[dm.MonthlyAggregate]:
    with open(cfg.require_path("monthlies"), newline="") as fh:
        try:
            return dm.read_monthlies(fh)
        except ValueError as exc:
            raise PreconditionError(f"monthly aggregates: {exc}") from None


def cmd_fit(cfg: PipelineConfig) -> None:
    monthlies = _read_monthlies(cfg)
    try:
        fit = dm.fit_fleet(monthlies)
    except dm.SingularFitError as exc:
        raise PreconditionError(str(exc)) from None
    out = cfg.output_dir
    _write_text(out / FIT, fit.as_text())
    with open(out / RESIDUALS, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESIDUAL_HEADER)
        for m, r, t in zip(monthlies, fit.residuals, fit.studentized):
            w.writerow(
                [
                    m.month,
                    repr(m.total_trips),
                    repr(m.total_operating_hours),
                    repr(m.total_operating_hours - r),
                    repr(r),
                    repr(t),
                    int(m.month in fit.outliers),
                ]
            )
    if fit.outliers:
        LOGGER.warning("outlier months: %s", ", ".join(fit.outliers))


def cmd_demand(cfg: PipelineConfig) -> None:
    with open(_artifact(cfg, QUARTERS), newline="") as fh:
        quarters = ingest.read_quarters(fh)
    fit = dm.FleetFit.from_text(_artifact(cfg, FIT).read_text())
    monthlies = _read_monthlies(cfg)
    try:
        series = dm.build_demand_series(quarters, monthlies, fit, cfg.get("demand", "mpge"))
    except dm.DataIntegrityError as exc:
        raise PreconditionError(str(exc)) from None
    out = cfg.output_dir
    with open(out / DEMAND, "w", newline="") as fh:
        dm.write_demand(series, fh)
    totals = dm.monthly_demand(series)
    _write_text(out / MONTHLY, "month,demand_kg\n" + "".join(f"{m},{v!r}\n" for m, v in totals.items()))


def _read_series(cfg: PipelineConfig) -> tuple[list[datetime], np.ndarray]:
    with open(_artifact(cfg, DEMAND), newline="") as fh:
        rows = dm.read_demand(fh)
    return [q.start for q, _ in rows], np.array([v for _, v in rows])


def cmd_train(cfg: PipelineConfig) -> None:
    _, series = _read_series(cfg)
    tau, stride = cfg.get("rnn", "tau"), cfg.get("rnn", "stride")
    try:
        windows, normalizer = fc.prepare_windows(series, tau, stride, seed=cfg.seed)
    except ValueError as exc:
        raise PreconditionError(str(exc)) from None
    for name, idx in windows.splits.items():
        if idx.size < 3:
            raise PreconditionError(f"series too short: {name} split has {idx.size} windows, need >= 3")
    model = fc.init_model(1, cfg.get("rnn", "n_hidden"), 1, cfg.get("rnn", "depth"), seed=cfg.seed)
    best, history = fc.train(model, windows, cfg.train_config())
    out = cfg.output_dir
    fc.save_model(best, out / MODEL, normalizer)
    with open(out / HISTORY, "w", newline="") as fh:
        history.write(fh)
    LOGGER.info("train: %d iterations, best val mse %.6g", len(history.rows) - 1, history.val().min())


def _read_forecast_file(path: Path, timestamps: list[datetime]) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"timestamp", "forecast_kg"} <= set(reader.fieldnames or ()):
            raise PreconditionError(f"forecast file {path} needs columns timestamp,forecast_kg")
        rows = [(r["timestamp"], float(r["forecast_kg"])) for r in reader]
    stamps = [t.strftime("%Y-%m-%d %H:%M:%S") for t in timestamps]
    if [r[0] for r in rows] != stamps:
        raise PreconditionError(f"forecast file {path} is not aligned with the demand series")
    return np.array([r[1] for r in rows])


def cmd_schedule(cfg: PipelineConfig, perfect: bool = False) -> None:
    stamps, actual = _read_series(cfg)
    plant, tariff = cfg.plant(), cfg.tariff()
    forecast_path = cfg.path("forecast")
    if perfect:
        forecast = actual.copy()
    elif forecast_path is not None:
        forecast = _read_forecast_file(forecast_path, stamps)
    else:
        tau = cfg.get("rnn", "tau")
        try:
            model, normalizer = fc.load_model(
                _artifact(cfg, MODEL), cfg.get("rnn", "n_hidden"), cfg.get("rnn", "depth")
            )
        except fc.ModelFormatError as exc:
            raise PreconditionError(f"model file: {exc}") from None
        if actual.size <= tau:
            raise PreconditionError(f"demand series has {actual.size} points, need more than tau={tau}")
        # per-period share of the next-hour forecast issued at each period
        forecast = fc.rolling_forecasts(model, normalizer, actual, tau)[:-1] / 4.0
        stamps, actual = stamps[tau:], actual[tau:]

    h0 = cfg.get("plant", "h_initial_fraction") * plant.h_max
    try:
        steps, totals = sch.simulate(stamps, forecast, actual, plant, tariff, h0)
        _, base = sch.baseline_jit(stamps, actual, plant, tariff, h0)
    except sch.ContractError as exc:
        raise PreconditionError(str(exc)) from None
    out = cfg.output_dir
    with open(out / SCHEDULE, "w", newline="") as fh:
        sch.write_schedule(steps, fh)
    text = totals.as_text() + base.as_text("baseline_") + f"percent_savings={sch.percent_savings(totals, base)!r}\n"
    _write_text(out / TOTALS, text)
    LOGGER.info("schedule: cost %.2f cents vs baseline %.2f", totals.cost, base.cost)


REPORT_BUNDLES = {
    "fig1_power.csv": (SCHEDULE, ("timestamp", "is_peak", "rate_cents_per_kwh", "E_kwh")),
    "fig2_storage.csv": (SCHEDULE, ("timestamp", "H_after_kg", "shortage_kg", "overflow_kg")),
    "fig5_regression.csv": (RESIDUALS, RESIDUAL_HEADER),
    "fig6_monthly_demand.csv": (MONTHLY, ("month", "demand_kg")),
    "fig7_history.csv": (HISTORY, fc.HISTORY_HEADER),
}


def cmd_report(cfg: PipelineConfig) -> None:
    sources = {name: _artifact(cfg, src) for name, (src, _) in REPORT_BUNDLES.items()}
    dest = cfg.output_dir / REPORT_DIR
    dest.mkdir(parents=True, exist_ok=True)
    manifest = []
    for name, (src, columns) in REPORT_BUNDLES.items():
        with open(sources[name], newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(columns) - set(reader.fieldnames or ())
            if missing:
                raise PreconditionError(f"{src} lacks columns {sorted(missing)}")
            rows = [[r[c] for c in columns] for r in reader]
        with open(dest / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            w.writerows(rows)
        manifest.append(f"{name}\tsource={src}\trows={len(rows)}\tcolumns={','.join(columns)}")
    _write_text(dest / "manifest.txt", "\n".join(manifest) + "\n")


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "demand": cmd_demand,
    "train": cmd_train,
    "schedule": cmd_schedule,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="h2sched", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI pipeline config")
        p.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
        if name == "schedule":
            p.add_argument("--perfect-forecast", action="store_true", help="use actual demand as the forecast")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        overrides = {("run", "seed"): args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        if args.command == "schedule":
            cmd_schedule(cfg, perfect=args.perfect_forecast)
        else:
            COMMANDS[args.command](cfg)
    except (ConfigError, PreconditionError) as exc:
        print(f"h2sched {args.command}: {exc}", file=sys.stderr)
        return 2
    except fc.TrainingDiverged as exc:
        print(f"h2sched {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"h2sched {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
