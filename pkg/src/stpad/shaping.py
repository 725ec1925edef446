"""Traffic-shaping defenses: stochastic padding, link padding, firewall, VPN.

Stochastic traffic padding (``stp_shape``) divides time into periods of fixed
length T. At every period boundary a decision function may schedule a padding
pattern of duration T starting at a uniformly random offset inside the period;
if the chosen start falls inside (or exactly at the end of) the currently
scheduled padding, the pattern is repeated instead, extending the padded span
by T. Detected user activity at an unpadded instant immediately starts a
genuine padded span of length T, and a genuine trigger that lands before a
scheduled-but-not-yet-started span discards that pending span. Spans therefore
never overlap, every span length is a positive multiple of T, at most one
pattern starts per period, and a span runs to completion once scheduled.

Within every T-aligned slice of a span, cover packets are injected per
direction so that real plus cover bytes equal the per-direction budget
rate*T exactly; slices whose real traffic already exceeds the budget are
recorded as overflows and passed through unshaped. Real events are never
delayed, resized, or dropped.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .decision import DecisionFunction
from .trace import (
    DOWNLOAD,
    MICROSECONDS_PER_SECOND,
    UPLOAD,
    ActivityLabel,
    Trace,
    TraceEvent,
)

if TYPE_CHECKING:  # avoid an import cycle; the detector lives in adversary
    from .adversary import ThresholdDetector

ORACLE_DETECTOR = "oracle"


@dataclass(frozen=True)
class ShapingConfig:
    """Parameters of one stochastic-padding run.

    ``rate_up``/``rate_down`` are the per-direction cover budgets in bytes per
    second; ``period_us`` is the pattern duration T. ``detector`` selects how
    user activity is recognized inside the shaper: the string ``"oracle"``
    uses ground-truth labels, otherwise any object with a
    ``detect(trace) -> [(start_us, end_us), ...]`` method is consulted.
    ``seed`` drives the pad-offset draws; the decision function carries its
    own seed.
    """

    rate_up: float
    rate_down: float
    period_us: int
    decision: DecisionFunction
    detector: "ThresholdDetector | str" = ORACLE_DETECTOR
    cover_packet_size: int = 1400
    seed: int = 0

    def __post_init__(self):
        if self.rate_up < 0 or self.rate_down < 0 or self.rate_up + self.rate_down <= 0:
            raise ValueError("need rate_up + rate_down > 0 with both rates >= 0")
        if self.period_us < 1:
            raise ValueError("period must be >= 1 us")
        if self.cover_packet_size < 1:
            raise ValueError("cover packet size must be >= 1")

    @property
    def rate_total(self) -> float:
        return self.rate_up + self.rate_down


@dataclass(frozen=True)
class PaddedSpan:
    """One maximal contiguous shaped interval; genuine if user activity caused it."""

    start_us: int
    end_us: int
    genuine: bool


@dataclass(frozen=True)
class PaddingSchedule:
    spans: tuple[PaddedSpan, ...]
    period_us: int

    @property
    def genuine_count(self) -> int:
        return sum(1 for s in self.spans if s.genuine)


@dataclass(frozen=True)
class SliceOverflow:
    """A T-slice whose real traffic exceeded the pattern budget in one direction."""

    start_us: int
    end_us: int
    direction: str
    real_bytes: int
    budget_bytes: int

    def to_json(self) -> dict:
        return {
            "start_us": self.start_us,
            "end_us": self.end_us,
            "direction": self.direction,
            "real_bytes": self.real_bytes,
            "budget_bytes": self.budget_bytes,
        }


@dataclass(frozen=True)
class ShapedResult:
    trace: Trace
    schedule: PaddingSchedule
    overflows: tuple[SliceOverflow, ...]


class _SpanBuilder:
    """Mutable span bookkeeping for one shaping run (see module docstring)."""

    def __init__(self, period_us: int):
        self.period_us = period_us
        self.starts: list[int] = []
        self.ends: list[int] = []
        self.genuine: list[bool] = []

    def covering(self, t: int) -> int | None:
        """Index of the span covering instant t, if any.

        Only the last two spans can cover a forward-moving t: the most recent
        span, or its predecessor when the most recent one is still pending.
        """
        for i in range(len(self.starts) - 1, max(len(self.starts) - 3, -1), -1):
            if self.starts[i] <= t < self.ends[i]:
                return i
        return None

    def decision_trigger(self, start: int) -> None:
        if not self.starts or start > self.ends[-1]:
            self.starts.append(start)
            self.ends.append(start + self.period_us)
            self.genuine.append(False)
        else:
            self.ends[-1] += self.period_us

    def activity_trigger(self, t: int) -> None:
        """Start (or contiguously extend) a genuine span at uncovered instant t."""
        if self.starts and t < self.starts[-1]:
            # a pending span scheduled after t is displaced by the genuine one
            self.starts.pop()
            self.ends.pop()
            self.genuine.pop()
        if self.starts and t <= self.ends[-1]:
            self.ends[-1] += self.period_us
            self.genuine[-1] = True
        else:
            self.starts.append(t)
            self.ends.append(t + self.period_us)
            self.genuine.append(True)

    def spans(self) -> tuple[PaddedSpan, ...]:
        return tuple(
            PaddedSpan(s, e, g) for s, e, g in zip(self.starts, self.ends, self.genuine)
        )


def _cover_flow_id(trace: Trace) -> str:
    flows = Counter(ev.flow_id for ev in trace.events)
    return flows.most_common(1)[0][0] if flows else "cover"


def _direction_index(trace: Trace, direction: str) -> tuple[np.ndarray, np.ndarray]:
    """Sorted timestamps and byte prefix sums for one direction of a trace."""
    ts = np.array(
        [ev.timestamp_us for ev in trace.events if ev.direction == direction], dtype=np.int64
    )
    sizes = np.array(
        [ev.size for ev in trace.events if ev.direction == direction], dtype=np.int64
    )
    return ts, np.concatenate(([0], np.cumsum(sizes)))


def _bytes_between(ts: np.ndarray, prefix: np.ndarray, start: int, end: int) -> int:
    lo = np.searchsorted(ts, start, side="left")
    hi = np.searchsorted(ts, end, side="left")
    return int(prefix[hi] - prefix[lo])


def _cover_packets(
    slice_start: int, slice_len: int, cover_bytes: int, packet_size: int
) -> list[tuple[int, int]]:
    """Evenly spaced (timestamp, size) cover packets summing to cover_bytes."""
    full, rem = divmod(cover_bytes, packet_size)
    count = full + (1 if rem else 0)
    packets = []
    for k in range(count):
        size = packet_size if k < full else rem
        packets.append((slice_start + (k * slice_len) // count, size))
    return packets


def _inject_cover(
    trace: Trace,
    spans: tuple[PaddedSpan, ...],
    budgets: dict[str, int],
    slice_us: int,
    packet_size: int,
    flow_id: str,
) -> tuple[list[TraceEvent], list[SliceOverflow]]:
    indexes = {d: _direction_index(trace, d) for d in (UPLOAD, DOWNLOAD)}
    cover: list[TraceEvent] = []
    overflows: list[SliceOverflow] = []
    for span in spans:
        for s0 in range(span.start_us, span.end_us, slice_us):
            s1 = s0 + slice_us
            for direction, budget in budgets.items():
                ts, prefix = indexes[direction]
                real = _bytes_between(ts, prefix, s0, s1)
                if real > budget:
                    overflows.append(SliceOverflow(s0, s1, direction, real, budget))
                    continue
                for t, size in _cover_packets(s0, slice_us, budget - real, packet_size):
                    cover.append(TraceEvent(t, direction, size, flow_id, is_cover=True))
    return cover, overflows


def _merge_events(trace: Trace, cover: list[TraceEvent], duration_us: int) -> Trace:
    events = sorted(list(trace.events) + cover, key=lambda ev: ev.timestamp_us)
    return Trace(tuple(events), duration_us, trace.labels)


def _activity_intervals(trace: Trace, detector: "ThresholdDetector | str") -> list[tuple[int, int]]:
    if detector == ORACLE_DETECTOR:
        return [(lab.start_us, lab.end_us) for lab in trace.labels]
    return list(detector.detect(trace))


def _budget_bytes(rate: float, slice_us: int) -> int:
    return round(rate * slice_us / MICROSECONDS_PER_SECOND)


def stp_shape(trace: Trace, config: ShapingConfig) -> ShapedResult:
    """Apply stochastic traffic padding to a trace.

    Deterministic for identical inputs: the decision function is re-seeded
    from its own spec and one uniform offset is drawn from ``config.seed``
    per fired decision (draw order is part of the golden-output contract).
    """
    period = config.period_us
    sampler = config.decision.fresh()
    rng = np.random.default_rng(config.seed)
    builder = _SpanBuilder(period)
    activities = _activity_intervals(trace, config.detector)

    period_count = math.ceil(trace.duration_us / period)
    act_idx = 0
    act_pos = 0

    def advance_activities(until: int) -> None:
        nonlocal act_idx, act_pos
        while act_idx < len(activities):
            a0, a1 = activities[act_idx]
            if a0 >= until:
                return
            t = max(a0, act_pos)
            while t < min(a1, until):
                covered = builder.covering(t)
                if covered is not None:
                    builder.genuine[covered] = True
                    t = builder.ends[covered]
                else:
                    builder.activity_trigger(t)
                    t = builder.ends[-1]
            act_pos = t
            if t < a1:
                return  # blocked at the period edge; resume after next boundary
            act_idx += 1
            act_pos = 0

    for i in range(period_count):
        boundary = i * period
        advance_activities(boundary)
        if sampler.decide(i):
            offset = int(rng.integers(0, period))
            builder.decision_trigger(boundary + offset)
        advance_activities(boundary + period)
    advance_activities(trace.duration_us)

    spans = builder.spans()
    budgets = {
        UPLOAD: _budget_bytes(config.rate_up, period),
        DOWNLOAD: _budget_bytes(config.rate_down, period),
    }
    cover, overflows = _inject_cover(
        trace, spans, budgets, period, config.cover_packet_size, _cover_flow_id(trace)
    )
    duration = max(trace.duration_us, max((s.end_us for s in spans), default=0))
    return ShapedResult(
        trace=_merge_events(trace, cover, duration),
        schedule=PaddingSchedule(spans, period),
        overflows=tuple(overflows),
    )


def ilp_shape(
    trace: Trace,
    rate_up: float,
    rate_down: float,
    *,
    slice_us: int = MICROSECONDS_PER_SECOND,
    cover_packet_size: int = 1400,
) -> ShapedResult:
    """Pad the whole trace to constant per-direction rates (link padding).

    Every ``slice_us`` bin carries exactly rate*slice bytes per direction
    (overflowing bins pass through and are recorded). Equivalent to
    stochastic padding with decision probability 1, up to span bookkeeping.
    """
    if rate_up < 0 or rate_down < 0 or rate_up + rate_down <= 0:
        raise ValueError("need rate_up + rate_down > 0 with both rates >= 0")
    n_slices = math.ceil(trace.duration_us / slice_us)
    if n_slices == 0:
        return ShapedResult(trace, PaddingSchedule((), slice_us), ())
    span = PaddedSpan(0, n_slices * slice_us, genuine=bool(trace.labels))
    budgets = {
        UPLOAD: _budget_bytes(rate_up, slice_us),
        DOWNLOAD: _budget_bytes(rate_down, slice_us),
    }
    cover, overflows = _inject_cover(
        trace, (span,), budgets, slice_us, cover_packet_size, _cover_flow_id(trace)
    )
    duration = max(trace.duration_us, span.end_us)
    return ShapedResult(
        trace=_merge_events(trace, cover, duration),
        schedule=PaddingSchedule((span,), slice_us),
        overflows=tuple(overflows),
    )


def firewall_filter(trace: Trace) -> Trace:
    """WAN view after blocking all device traffic: no events, same duration."""
    return Trace((), trace.duration_us, trace.labels)


def vpn_aggregate(
    traces: list[tuple[str, Trace]],
    *,
    tunnel_id: str = "vpn",
    encapsulation_bytes: int = 0,
) -> Trace:
    """Merge device traces into a single tunnel flow.

    Every event keeps its timestamp, gains ``encapsulation_bytes``, and is
    rewritten to the tunnel flow id. Ground-truth labels are kept, prefixed
    with the device name; overlapping labels from different devices coalesce.
    """
    if not traces:
        raise ValueError("vpn_aggregate needs at least one trace")
    events = []
    raw_labels = []
    duration = 0
    for name, tr in traces:
        duration = max(duration, tr.duration_us)
        events.extend(
            replace(ev, flow_id=tunnel_id, size=ev.size + encapsulation_bytes)
            for ev in tr.events
        )
        raw_labels.extend(
            (lab.start_us, lab.end_us, f"{name}:{lab.kind}") for lab in tr.labels
        )
    events.sort(key=lambda ev: ev.timestamp_us)

    raw_labels.sort()
    merged: list[tuple[int, int, str]] = []
    for start, end, kind in raw_labels:
        if merged and start < merged[-1][1]:
            prev = merged[-1]
            merged[-1] = (prev[0], max(prev[1], end), f"{prev[2]}+{kind}")
        else:
            merged.append((start, end, kind))
    labels = tuple(ActivityLabel(start, end, kind) for start, end, kind in merged)
    return Trace(tuple(events), duration, labels)


@dataclass(frozen=True)
class SendEntry:
    """One transmission from the token-bucket shaper."""

    time_us: int
    size: int
    is_cover: bool
    fragments: int = 1  # opportunities consumed (>1 when a device packet spans several)


def token_bucket_pad(
    real_packets: list[tuple[int, int]],
    rate: float,
    cover_size: int,
    duration_us: int,
) -> list[SendEntry]:
    """Two-queue token-bucket discipline: device packets always beat cover.

    Tokens worth ``cover_size`` bytes arrive at ``rate`` bytes/s into a
    one-token bucket (full at t=0), creating evenly spaced send
    opportunities. Each opportunity sends the oldest queued device packet if
    one has arrived, else a cover packet; a device packet bigger than one
    token consumes consecutive opportunities (noted via ``fragments``).
    """
    if rate <= 0:
        raise ValueError("rate must be > 0")
    if cover_size < 1:
        raise ValueError("cover size must be >= 1")
    queue = sorted(real_packets)
    log: list[SendEntry] = []
    qi = 0
    k = 0
    while True:
        t = int(k * cover_size * MICROSECONDS_PER_SECOND / rate)
        if t >= duration_us:
            break
        if qi < len(queue) and queue[qi][0] <= t:
            arrival, size = queue[qi]
            qi += 1
            fragments = math.ceil(size / cover_size)
            log.append(SendEntry(t, size, is_cover=False, fragments=fragments))
            k += fragments
        else:
            log.append(SendEntry(t, cover_size, is_cover=True))
            k += 1
    return log


def save_schedule(schedule: PaddingSchedule, path: Path | str) -> None:
    lines = ["start_us,end_us,genuine"]
    lines += [f"{s.start_us},{s.end_us},{int(s.genuine)}" for s in schedule.spans]
    Path(path).write_text("\n".join(lines) + "\n")


def load_schedule(path: Path | str, period_us: int) -> PaddingSchedule:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "start_us,end_us,genuine":
        raise ValueError(f"{path}: bad schedule header")
    spans = []
    for line in text[1:]:
        if not line:
            continue
        start, end, genuine = line.split(",")
        spans.append(PaddedSpan(int(start), int(end), genuine == "1"))
    return PaddingSchedule(tuple(spans), period_us)


def save_overflows(overflows: tuple[SliceOverflow, ...], path: Path | str) -> None:
    payload = {"overflow_count": len(overflows), "overflows": [o.to_json() for o in overflows]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


__all__ = [
    "ORACLE_DETECTOR",
    "ShapingConfig",
    "PaddedSpan",
    "PaddingSchedule",
    "SliceOverflow",
    "ShapedResult",
    "SendEntry",
    "stp_shape",
    "ilp_shape",
    "firewall_filter",
    "vpn_aggregate",
    "token_bucket_pad",
    "save_schedule",
    "load_schedule",
    "save_overflows",
]
