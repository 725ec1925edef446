"""Synthetic device-trace generation by replaying recorded activity segments.

A generator walks the timeline in decision ticks; at each tick outside a
replay it starts a uniformly chosen activity segment with the configured
probability. While a replay is in progress no further decisions are made; the
next decision happens exactly when the replay ends, so at probability 1 the
schedule is back-to-back replays. Optional constant-rate background traffic
fills the gaps between replays (never the replays themselves).
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .trace import (
    MICROSECONDS_PER_SECOND,
    ActivityLabel,
    Trace,
    TraceEvent,
)


@dataclass(frozen=True)
class ActivitySegment:
    """One recorded user activity: relative-timestamped events plus a kind tag."""

    events: tuple[TraceEvent, ...]
    duration_us: int
    kind: str

    def __post_init__(self):
        if not self.events:
            raise ValueError("activity segment must contain at least one event")
        if any(ev.timestamp_us >= self.duration_us for ev in self.events):
            raise ValueError("segment events must fall inside the segment duration")

    @property
    def total_bytes(self) -> int:
        return sum(ev.size for ev in self.events)


@dataclass(frozen=True)
class DeviceProfile:
    """Replayable behaviour of one device: activity segments plus background."""

    name: str
    segments: tuple[ActivitySegment, ...]
    background_rate_up: float = 0.0  # bytes/second
    background_rate_down: float = 0.0
    background_packet_size: int = 100

    def __post_init__(self):
        if not self.segments:
            raise ValueError("device profile needs at least one activity segment")
        if self.background_rate_up < 0 or self.background_rate_down < 0:
            raise ValueError("background rates must be >= 0")
        if self.background_packet_size < 1:
            raise ValueError("background packet size must be >= 1")

    @property
    def mean_segment_bytes(self) -> float:
        return float(np.mean([seg.total_bytes for seg in self.segments]))

    @property
    def peak_rate(self) -> tuple[float, float]:
        """Highest per-direction mean rate (bytes/s) over the segments."""
        up = down = 0.0
        for seg in self.segments:
            seconds = seg.duration_us / MICROSECONDS_PER_SECOND
            up = max(up, sum(e.size for e in seg.events if e.direction == "up") / seconds)
            down = max(down, sum(e.size for e in seg.events if e.direction == "down") / seconds)
        return up, down


@dataclass(frozen=True)
class GeneratorConfig:
    activity_probability: float  # chance of starting a replay at a decision tick
    duration_us: int
    decision_tick_us: int = MICROSECONDS_PER_SECOND
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.activity_probability <= 1.0:
            raise ValueError(f"activity probability must be in [0,1]: {self.activity_probability}")
        if self.decision_tick_us < 1:
            raise ValueError("decision tick must be >= 1 us")
        if self.duration_us < 0:
            raise ValueError("duration must be >= 0")


def _background_events(
    gaps: list[tuple[int, int]],
    direction: str,
    rate: float,
    packet_size: int,
    flow_id: str,
) -> list[TraceEvent]:
    if rate <= 0:
        return []
    interval = max(1, round(packet_size * MICROSECONDS_PER_SECOND / rate))
    out = []
    for start, end in gaps:
        t = start
        while t < end:
            out.append(TraceEvent(t, direction, packet_size, flow_id))
            t += interval
    return out


def generate_trace(profile: DeviceProfile, config: GeneratorConfig) -> Trace:
    """Produce a labelled trace; byte-identical for identical inputs and seed.

    RNG draw order (part of the reproducibility contract): one uniform draw
    per decision tick, then one integer draw for the segment choice when the
    decision fires.
    """
    rng = np.random.default_rng(config.seed)
    p = config.activity_probability
    events: list[TraceEvent] = []
    labels: list[ActivityLabel] = []
    gaps: list[tuple[int, int]] = []

    t = 0
    gap_start = 0
    while t < config.duration_us:
        if rng.random() < p:
            seg = profile.segments[int(rng.integers(len(profile.segments)))]
            if t > gap_start:
                gaps.append((gap_start, t))
            events.extend(replace(ev, timestamp_us=ev.timestamp_us + t) for ev in seg.events)
            labels.append(ActivityLabel(t, t + seg.duration_us, seg.kind))
            t += seg.duration_us
            gap_start = t
        else:
            t += config.decision_tick_us

    duration = max(config.duration_us, labels[-1].end_us if labels else 0)
    if duration > gap_start:
        gaps.append((gap_start, duration))

    events.extend(
        _background_events(gaps, "up", profile.background_rate_up, profile.background_packet_size, profile.name)
    )
    events.extend(
        _background_events(gaps, "down", profile.background_rate_down, profile.background_packet_size, profile.name)
    )
    events.sort(key=lambda ev: ev.timestamp_us)
    return Trace(tuple(events), duration, tuple(labels))


def profile_from_trace(trace: Trace, name: str | None = None) -> DeviceProfile:
    """Extract a replayable profile from a labelled trace.

    Each label becomes a segment with events re-based to the label start;
    labels containing no events are skipped with a warning. Background rates
    are estimated from the unlabelled time.
    """
    if not trace.labels:
        raise ValueError("no activities to extract: trace has no labels")

    segments = []
    for lab in trace.labels:
        seg_events = tuple(
            replace(ev, timestamp_us=ev.timestamp_us - lab.start_us)
            for ev in trace.events
            if lab.start_us <= ev.timestamp_us < lab.end_us
        )
        if not seg_events:
            warnings.warn(
                f"label [{lab.start_us}, {lab.end_us}) '{lab.kind}' contains no events; skipped",
                stacklevel=2,
            )
            continue
        segments.append(ActivitySegment(seg_events, lab.end_us - lab.start_us, lab.kind))
    if not segments:
        raise ValueError("no activities to extract: every label was empty")

    labelled_us = sum(lab.end_us - lab.start_us for lab in trace.labels)
    unlabelled_us = trace.duration_us - labelled_us
    bg_events = [
        ev
        for ev in trace.events
        if not any(lab.start_us <= ev.timestamp_us < lab.end_us for lab in trace.labels)
    ]
    rate_up = rate_down = 0.0
    if unlabelled_us > 0:
        seconds = unlabelled_us / MICROSECONDS_PER_SECOND
        rate_up = sum(ev.size for ev in bg_events if ev.direction == "up") / seconds
        rate_down = sum(ev.size for ev in bg_events if ev.direction == "down") / seconds
    packet_size = round(np.mean([ev.size for ev in bg_events])) if bg_events else 100

    if name is None:
        flows = Counter(ev.flow_id for ev in trace.events)
        name = flows.most_common(1)[0][0] if flows else "device"

    return DeviceProfile(
        name=name,
        segments=tuple(segments),
        background_rate_up=rate_up,
        background_rate_down=rate_down,
        background_packet_size=int(packet_size),
    )


def save_profile(profile: DeviceProfile, path: Path | str) -> None:
    payload = {
        "name": profile.name,
        "background_rate_up": profile.background_rate_up,
        "background_rate_down": profile.background_rate_down,
        "background_packet_size": profile.background_packet_size,
        "segments": [
            {
                "kind": seg.kind,
                "duration_us": seg.duration_us,
                "events": [
                    [ev.timestamp_us, ev.direction, ev.size, ev.flow_id] for ev in seg.events
                ],
            }
            for seg in profile.segments
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_profile(path: Path | str) -> DeviceProfile:
    payload = json.loads(Path(path).read_text())
    segments = tuple(
        ActivitySegment(
            events=tuple(TraceEvent(ts, direction, size, flow) for ts, direction, size, flow in seg["events"]),
            duration_us=seg["duration_us"],
            kind=seg["kind"],
        )
        for seg in payload["segments"]
    )
    return DeviceProfile(
        name=payload["name"],
        segments=segments,
        background_rate_up=payload.get("background_rate_up", 0.0),
        background_rate_down=payload.get("background_rate_down", 0.0),
        background_packet_size=payload.get("background_packet_size", 100),
    )


__all__ = [
    "ActivitySegment",
    "DeviceProfile",
    "GeneratorConfig",
    "generate_trace",
    "profile_from_trace",
    "save_profile",
    "load_profile",
]
