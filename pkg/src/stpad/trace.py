"""Packet-metadata trace model, CSV I/O, rate binning, and period segmentation.

Timestamps are integer microseconds since trace start. Rates are bytes per
second. All containers are immutable; operations return new values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UPLOAD = "up"
DOWNLOAD = "down"
DIRECTIONS = (UPLOAD, DOWNLOAD)

TRACE_HEADER = ["timestamp_us", "direction", "bytes", "flow_id", "is_cover"]
LABEL_HEADER = ["start_us", "end_us", "kind"]

MICROSECONDS_PER_SECOND = 1_000_000


class TraceParseError(ValueError):
    """Raised for malformed trace or label files; carries the offending line."""

    def __init__(self, path: Path | str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


@dataclass(frozen=True, slots=True)
class TraceEvent:
    """One observed packet: time, direction, size, and flow tag."""

    timestamp_us: int
    direction: str
    size: int
    flow_id: str
    is_cover: bool = False

    def __post_init__(self):
        if self.timestamp_us < 0:
            raise ValueError(f"negative timestamp: {self.timestamp_us}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}: {self.direction!r}")
        if self.size < 1:
            raise ValueError(f"event size must be >= 1 byte: {self.size}")


@dataclass(frozen=True, slots=True)
class ActivityLabel:
    """Ground-truth interval [start_us, end_us) tagged with an activity kind."""

    start_us: int
    end_us: int
    kind: str

    def __post_init__(self):
        if not 0 <= self.start_us < self.end_us:
            raise ValueError(f"label must satisfy 0 <= start < end: [{self.start_us}, {self.end_us})")


@dataclass(frozen=True)
class Trace:
    """An immutable, time-ordered sequence of packet events plus ground truth.

    ``resorted`` flags that the source file carried out-of-order timestamps
    and the events were re-sorted on load.
    """

    events: tuple[TraceEvent, ...]
    duration_us: int
    labels: tuple[ActivityLabel, ...] = ()
    resorted: bool = False

    def __post_init__(self):
        prev = -1
        for ev in self.events:
            if ev.timestamp_us < prev:
                raise ValueError("events must be sorted by timestamp")
            if ev.timestamp_us >= self.duration_us:
                raise ValueError(
                    f"event at {ev.timestamp_us} us outside trace duration {self.duration_us} us"
                )
            prev = ev.timestamp_us
        prev_end = 0
        for lab in self.labels:
            if lab.start_us < prev_end:
                raise ValueError("labels must be sorted and non-overlapping")
            if lab.end_us > self.duration_us:
                raise ValueError(
                    f"label ending at {lab.end_us} us outside trace duration {self.duration_us} us"
                )
            prev_end = lab.end_us

    @property
    def total_bytes(self) -> int:
        return sum(ev.size for ev in self.events)

    def bytes_in(self, start_us: int, end_us: int, direction: str | None = None) -> int:
        """Total event bytes with timestamp in [start_us, end_us)."""
        return sum(
            ev.size
            for ev in self.events
            if start_us <= ev.timestamp_us < end_us
            and (direction is None or ev.direction == direction)
        )


@dataclass(frozen=True, eq=False)
class PeriodGrid:
    """Time divided into fixed-length periods, with per-period activity flags."""

    period_us: int
    period_count: int
    activity_flags: np.ndarray  # bool, shape (period_count,)

    @property
    def activity_fraction(self) -> float:
        if self.period_count == 0:
            return 0.0
        return float(np.count_nonzero(self.activity_flags)) / self.period_count


@dataclass(frozen=True)
class TraceStats:
    """Per-period traffic statistics of a trace.

    ``mean_activity_bytes`` / ``mean_background_bytes`` average the
    bidirectional bytes over activity-flagged / unflagged periods. The
    ``*_defined`` markers are False when there were no periods of that kind
    (the corresponding mean is reported as 0 and must not be trusted).
    ``activity_rate_stddev_ratio`` is the population standard deviation of the
    per-activity mean rates divided by their mean.
    """

    mean_activity_bytes: float
    mean_background_bytes: float
    activity_fraction: float
    peak_rate_up: float
    peak_rate_down: float
    activity_rate_stddev_ratio: float
    activity_defined: bool = True
    background_defined: bool = True

    def to_json(self) -> dict:
        return {
            "mean_activity_bytes": self.mean_activity_bytes,
            "mean_background_bytes": self.mean_background_bytes,
            "activity_fraction": self.activity_fraction,
            "peak_rate_up": self.peak_rate_up,
            "peak_rate_down": self.peak_rate_down,
            "activity_rate_stddev_ratio": self.activity_rate_stddev_ratio,
            "activity_defined": self.activity_defined,
            "background_defined": self.background_defined,
        }


def _label_path(path: Path) -> Path:
    return path.with_name(path.stem + ".labels.csv")


def _parse_bool(text: str) -> bool:
    if text == "0":
        return False
    if text == "1":
        return True
    raise ValueError(f"expected 0 or 1, got {text!r}")


def load_labels(path: Path | str) -> tuple[ActivityLabel, ...]:
    """Read a label CSV (``start_us,end_us,kind``)."""
    path = Path(path)
    labels = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LABEL_HEADER:
            raise TraceParseError(path, 1, f"bad label header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 3:
                    raise ValueError(f"expected 3 fields, got {len(row)}")
                labels.append(ActivityLabel(int(row[0]), int(row[1]), row[2]))
            except ValueError as exc:
                raise TraceParseError(path, lineno, str(exc)) from exc
    labels.sort(key=lambda lab: (lab.start_us, lab.end_us))
    return tuple(labels)


def load_trace(path: Path | str) -> Trace:
    """Read a trace CSV, attaching labels from ``<stem>.labels.csv`` if present.

    Events are returned sorted; if the file rows were out of timestamp order
    the trace is flagged ``resorted`` rather than rejected. Duration is the
    last event timestamp plus one microsecond (or the last label end,
    whichever is later); an empty file yields duration 0.
    """
    path = Path(path)
    events = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise TraceParseError(path, 1, f"bad trace header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 5:
                    raise ValueError(f"expected 5 fields, got {len(row)}")
                events.append(
                    TraceEvent(
                        timestamp_us=int(row[0]),
                        direction=row[1],
                        size=int(row[2]),
                        flow_id=row[3],
                        is_cover=_parse_bool(row[4]),
                    )
                )
            except ValueError as exc:
                raise TraceParseError(path, lineno, str(exc)) from exc

    resorted = any(
        events[i].timestamp_us > events[i + 1].timestamp_us for i in range(len(events) - 1)
    )
    if resorted:
        events.sort(key=lambda ev: ev.timestamp_us)

    label_file = _label_path(path)
    labels = load_labels(label_file) if label_file.exists() else ()

    duration = events[-1].timestamp_us + 1 if events else 0
    if labels:
        duration = max(duration, max(lab.end_us for lab in labels))
    return Trace(tuple(events), duration, labels, resorted=resorted)


def save_trace(trace: Trace, path: Path | str, *, with_labels: bool = True) -> None:
    """Write a trace CSV (and companion label CSV when labels are present)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for ev in trace.events:
            writer.writerow(
                [ev.timestamp_us, ev.direction, ev.size, ev.flow_id, int(ev.is_cover)]
            )
    if with_labels and trace.labels:
        save_labels(trace.labels, _label_path(path))


def save_labels(labels: tuple[ActivityLabel, ...], path: Path | str) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        for lab in labels:
            writer.writerow([lab.start_us, lab.end_us, lab.kind])


def _event_arrays(trace: Trace) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(timestamps, sizes, is_up) arrays for vectorised binning."""
    n = len(trace.events)
    ts = np.empty(n, dtype=np.int64)
    sizes = np.empty(n, dtype=np.int64)
    is_up = np.empty(n, dtype=bool)
    for i, ev in enumerate(trace.events):
        ts[i] = ev.timestamp_us
        sizes[i] = ev.size
        is_up[i] = ev.direction == UPLOAD
    return ts, sizes, is_up


def rate_series(trace: Trace, bin_us: int = MICROSECONDS_PER_SECOND, direction: str = "both") -> np.ndarray:
    """Per-bin byte totals: bin i sums events with timestamp in [i*bin, (i+1)*bin).

    The series covers [0, duration); summing it recovers the total matched
    bytes exactly.
    """
    if bin_us < 1:
        raise ValueError(f"bin width must be >= 1 us: {bin_us}")
    if direction not in (UPLOAD, DOWNLOAD, "both"):
        raise ValueError(f"direction must be 'up', 'down' or 'both': {direction!r}")
    n_bins = math.ceil(trace.duration_us / bin_us)
    if n_bins == 0:
        return np.zeros(0, dtype=np.int64)
    ts, sizes, is_up = _event_arrays(trace)
    if direction == UPLOAD:
        ts, sizes = ts[is_up], sizes[is_up]
    elif direction == DOWNLOAD:
        ts, sizes = ts[~is_up], sizes[~is_up]
    series = np.bincount(ts // bin_us, weights=sizes, minlength=n_bins)
    return np.rint(series).astype(np.int64)


def segment_periods(trace: Trace, period_us: int) -> PeriodGrid:
    """Divide the trace into fixed periods and flag those intersecting a label."""
    if period_us < 1:
        raise ValueError(f"period length must be >= 1 us: {period_us}")
    count = math.ceil(trace.duration_us / period_us)
    flags = np.zeros(count, dtype=bool)
    for lab in trace.labels:
        first = lab.start_us // period_us
        last = (lab.end_us - 1) // period_us
        flags[first : min(last, count - 1) + 1] = True
    return PeriodGrid(period_us, count, flags)


def compute_stats(trace: Trace, grid: PeriodGrid) -> TraceStats:
    """Per-period activity/background byte averages and peak per-second rates."""
    per_period = rate_series(trace, grid.period_us)
    if len(per_period) != grid.period_count:
        raise ValueError("grid does not match trace duration")
    flags = grid.activity_flags

    n_active = int(np.count_nonzero(flags))
    activity_defined = n_active > 0
    background_defined = grid.period_count - n_active > 0
    mean_activity = float(per_period[flags].mean()) if activity_defined else 0.0
    mean_background = float(per_period[~flags].mean()) if background_defined else 0.0

    per_second_up = rate_series(trace, MICROSECONDS_PER_SECOND, UPLOAD)
    per_second_down = rate_series(trace, MICROSECONDS_PER_SECOND, DOWNLOAD)
    peak_up = float(per_second_up.max()) if len(per_second_up) else 0.0
    peak_down = float(per_second_down.max()) if len(per_second_down) else 0.0

    rates = []
    for lab in trace.labels:
        seconds = (lab.end_us - lab.start_us) / MICROSECONDS_PER_SECOND
        rates.append(trace.bytes_in(lab.start_us, lab.end_us) / seconds)
    ratio = 0.0
    if rates:
        mean_rate = float(np.mean(rates))
        if mean_rate > 0:
            ratio = float(np.std(rates)) / mean_rate

    return TraceStats(
        mean_activity_bytes=mean_activity,
        mean_background_bytes=mean_background,
        activity_fraction=grid.activity_fraction,
        peak_rate_up=peak_up,
        peak_rate_down=peak_down,
        activity_rate_stddev_ratio=ratio,
        activity_defined=activity_defined,
        background_defined=background_defined,
    )


__all__ = [
    "UPLOAD",
    "DOWNLOAD",
    "TRACE_HEADER",
    "LABEL_HEADER",
    "MICROSECONDS_PER_SECOND",
    "TraceParseError",
    "TraceEvent",
    "ActivityLabel",
    "Trace",
    "PeriodGrid",
    "TraceStats",
    "load_trace",
    "load_labels",
    "save_trace",
    "save_labels",
    "rate_series",
    "segment_periods",
    "compute_stats",
]
