"""Ridership ingestion, 15-minute aggregation, scaling and sample windows.

The nightly out-of-service block is removed, not zero-filled: the grid holds
only in-service rows, concatenated day after day, and all window arithmetic
runs on that concatenated timeline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta

import numpy as np

from .errors import ConfigError, CoverageError, DataError
from .graph import TransitGraph

DEFAULT_INTERVAL_MINUTES = 15
DEFAULT_SERVICE_WINDOW = (time(6, 0), time(23, 59))
DEFAULT_WINDOW_LEN = 20
HISTORY_LAG = timedelta(days=7)


@dataclass(frozen=True)
class RidershipRecord:
    timestamp: datetime
    station_id: str
    boardings: int

    def __post_init__(self):
        if self.boardings < 0:
            raise DataError(f"negative boardings at {self.station_id} {self.timestamp}")


@dataclass
class RidershipGrid:
    """Time-by-station matrix of boarding counts on a fixed interval grid."""

    times: list[datetime]             # one per row, strictly increasing
    values: np.ndarray                # (T, N) float64
    station_ids: list[str]
    interval_minutes: int = DEFAULT_INTERVAL_MINUTES
    service_window: tuple[time, time] = DEFAULT_SERVICE_WINDOW
    _time_index: dict[datetime, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.values.shape != (len(self.times), len(self.station_ids)):
            raise DataError("grid values shape inconsistent with times/stations")
        if not self._time_index:
            self._time_index = {t: i for i, t in enumerate(self.times)}

    @property
    def n_rows(self) -> int:
        return len(self.times)

    @property
    def n_stations(self) -> int:
        return len(self.station_ids)

    def row_of(self, when: datetime) -> int | None:
        return self._time_index.get(when)

    def slots_per_day(self) -> int:
        start, end = self.service_window
        span = (end.hour * 60 + end.minute) - (start.hour * 60 + start.minute)
        return span // self.interval_minutes + 1

    def subset_rows(self, mask: np.ndarray) -> "RidershipGrid":
        idx = np.flatnonzero(mask)
        return RidershipGrid(times=[self.times[i] for i in idx],
                             values=self.values[idx].copy(),
                             station_ids=list(self.station_ids),
                             interval_minutes=self.interval_minutes,
                             service_window=self.service_window)

    def with_values(self, values: np.ndarray) -> "RidershipGrid":
        return RidershipGrid(times=list(self.times), values=values,
                             station_ids=list(self.station_ids),
                             interval_minutes=self.interval_minutes,
                             service_window=self.service_window)


def _in_service(when: time, window: tuple[time, time]) -> bool:
    return window[0] <= when <= window[1]


def service_slots(day: date, interval_minutes: int,
                  window: tuple[time, time]) -> list[datetime]:
    """All in-service bucket start times of one day, in order."""
    slots = []
    cur = datetime.combine(day, window[0])
    end = datetime.combine(day, window[1])
    step = timedelta(minutes=interval_minutes)
    while cur <= end:
        slots.append(cur)
        cur += step
    return slots


def aggregate(records: list[RidershipRecord], graph: TransitGraph,
              interval_minutes: int = DEFAULT_INTERVAL_MINUTES,
              service_window: tuple[time, time] = DEFAULT_SERVICE_WINDOW) -> RidershipGrid:
    """Sum boardings per (interval bucket, station).

    Exact duplicate records collapse to one before summation; buckets outside
    the service window are dropped; missing in-service buckets become 0.
    """
    if 60 % interval_minutes != 0:
        raise ConfigError(f"interval {interval_minutes} does not divide 60")
    if not records:
        raise DataError("aggregate: no records")
    known = set(graph.station_ids)
    unknown = sorted({r.station_id for r in records} - known)
    if unknown:
        raise DataError(f"aggregate: unknown station ids {unknown}")

    col = {sid: k for k, sid in enumerate(graph.station_ids)}
    first = min(r.timestamp for r in records).date()
    last = max(r.timestamp for r in records).date()
    times: list[datetime] = []
    day = first
    while day <= last:
        times.extend(service_slots(day, interval_minutes, service_window))
        day += timedelta(days=1)
    index = {t: i for i, t in enumerate(times)}

    values = np.zeros((len(times), len(col)))
    for rec in set(records):
        bucket = rec.timestamp.replace(
            minute=rec.timestamp.minute - rec.timestamp.minute % interval_minutes,
            second=0, microsecond=0)
        row = index.get(bucket)
        if row is None:
            continue  # outside service window
        values[row, col[rec.station_id]] += rec.boardings

    return RidershipGrid(times=times, values=values, station_ids=graph.station_ids,
                         interval_minutes=interval_minutes, service_window=service_window)


@dataclass
class ScalerParams:
    """Per-station min-max scaling fitted on training rows only."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if np.any(self.maxs < self.mins):
            raise DataError("scaler: max < min")

    @property
    def spans(self) -> np.ndarray:
        return self.maxs - self.mins


def fit_scaler(train_values: np.ndarray) -> ScalerParams:
    if train_values.shape[0] < 1:
        raise DataError("fit_scaler: need at least one training row")
    return ScalerParams(mins=train_values.min(axis=0), maxs=train_values.max(axis=0))


def apply_scaler(values: np.ndarray, scaler: ScalerParams) -> np.ndarray:
    span = scaler.spans
    safe = np.where(span > 0, span, 1.0)
    scaled = (values - scaler.mins) / safe
    return np.where(span > 0, scaled, 0.0)


def invert_scaler(values: np.ndarray, scaler: ScalerParams) -> np.ndarray:
    return values * scaler.spans + scaler.mins


@dataclass
class SampleWindow:
    """One training/inference sample.

    ``x_recent`` holds the last ``recent_len`` in-service rows before the
    target; ``x_hist`` the window ending exactly seven days before the
    target, so its last column is the historical analogue of ``y``.
    """

    x_recent: np.ndarray   # (N, I)
    x_hist: np.ndarray     # (N, N_h)
    y: np.ndarray          # (N,)
    target_time: datetime
    target_row: int


def make_windows(grid: RidershipGrid, recent_len: int = DEFAULT_WINDOW_LEN,
                 hist_len: int = DEFAULT_WINDOW_LEN) -> tuple[list[SampleWindow], int]:
    """Build every sample with full recent and historical coverage.

    Returns (samples, skipped) where ``skipped`` counts target rows dropped
    for insufficient history.
    """
    samples: list[SampleWindow] = []
    skipped = 0
    for t_idx, target_time in enumerate(grid.times):
        h_idx = grid.row_of(target_time - HISTORY_LAG)
        if t_idx < recent_len or h_idx is None or h_idx < hist_len - 1:
            skipped += 1
            continue
        samples.append(SampleWindow(
            x_recent=grid.values[t_idx - recent_len:t_idx].T.copy(),
            x_hist=grid.values[h_idx - hist_len + 1:h_idx + 1].T.copy(),
            y=grid.values[t_idx].copy(),
            target_time=target_time,
            target_row=t_idx))
    return samples, skipped


def split_periods(grid: RidershipGrid,
                  periods: dict[str, tuple[date, date]]) -> dict[str, RidershipGrid]:
    """Split grid rows into named, non-overlapping inclusive date ranges."""
    spans = sorted(periods.items(), key=lambda kv: kv[1][0])
    for (_, (a0, a1)), (_, (b0, b1)) in zip(spans, spans[1:]):
        if a1 >= b0:
            raise ConfigError(f"period ranges overlap around {b0}")
    out = {}
    dates = np.array([t.date() for t in grid.times])
    for name, (start, end) in periods.items():
        if start > end:
            raise ConfigError(f"period '{name}': start {start} after end {end}")
        out[name] = grid.subset_rows((dates >= start) & (dates <= end))
    return out


def samples_in_range(samples: list[SampleWindow], start: date, end: date) -> list[SampleWindow]:
    return [s for s in samples if start <= s.target_time.date() <= end]


def load_records(path) -> list[RidershipRecord]:
    """Read a `timestamp,station_id,boardings` CSV with ISO-8601 timestamps."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = (ln for ln in fh if not ln.startswith("#"))
        for row in csv.DictReader(rows):
            records.append(RidershipRecord(timestamp=datetime.fromisoformat(row["timestamp"]),
                                           station_id=row["station_id"],
                                           boardings=int(row["boardings"])))
    return records


def require_week_coverage(grid: RidershipGrid) -> None:
    if grid.n_rows == 0 or grid.times[-1] - grid.times[0] < timedelta(days=6):
        raise CoverageError("grid must span at least one full week")
