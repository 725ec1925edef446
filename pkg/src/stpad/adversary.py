"""Passive network observer: activity detection, span classification, and
device fingerprinting.

The observer sees only packet times, sizes, directions, and flow/destination
labels. Activity detection flags rate bins exceeding the series mean by a
multiple of its standard deviation; classification treats every padded span
as an attempted activity inference and evaluates the attempts against ground
truth to measure confidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .shaping import PaddingSchedule, ShapedResult
from .trace import (
    MICROSECONDS_PER_SECOND,
    ActivityLabel,
    Trace,
    rate_series,
    segment_periods,
)


@dataclass(frozen=True)
class ThresholdDetector:
    """Flags rate bins above mean + k * stddev, merging nearby detections.

    A zero-variance series (e.g. perfectly link-padded traffic) produces no
    detections: nothing exceeds the degenerate threshold.
    """

    bin_us: int = MICROSECONDS_PER_SECOND
    k: float = 3.0
    min_quiet_gap_us: int = 2 * MICROSECONDS_PER_SECOND

    def __post_init__(self):
        if self.bin_us < 1:
            raise ValueError("bin width must be >= 1 us")
        if self.k <= 0:
            raise ValueError("k must be > 0")

    def detect(self, trace: Trace) -> list[tuple[int, int]]:
        series = rate_series(trace, self.bin_us).astype(float)
        if len(series) == 0:
            return []
        threshold = series.mean() + self.k * series.std()
        flagged = np.flatnonzero(series > threshold)
        intervals: list[tuple[int, int]] = []
        for i in flagged:
            start = int(i) * self.bin_us
            end = start + self.bin_us
            if intervals and start - intervals[-1][1] <= self.min_quiet_gap_us:
                intervals[-1] = (intervals[-1][0], end)
            else:
                intervals.append((start, end))
        return intervals


def detect_activities(trace: Trace, detector: ThresholdDetector) -> list[tuple[int, int]]:
    """Intervals the observer believes contain user activity."""
    return detector.detect(trace)


@dataclass(frozen=True)
class InferenceReport:
    """Outcome of one inference attack, evaluated against ground truth.

    ``detected`` and ``span_verdicts`` order follow the shaped trace and the
    padding schedule. ``confidence`` is the span-level estimate (genuine
    spans / padded spans); ``confidence_by_period`` counts period-length
    slices of the padded spans instead, which stays meaningful when constant
    padding merges into a single long span. ``c_min`` is the confidence floor:
    the fraction of periods in which activity really occurs.
    """

    detected: tuple[tuple[int, int], ...]
    span_verdicts: tuple[str, ...]  # "genuine" | "unknown" per padded span
    confidence: float
    confidence_by_period: float
    c_min: float

    def to_json(self) -> dict:
        return {
            "detected": [list(iv) for iv in self.detected],
            "span_verdicts": list(self.span_verdicts),
            "confidence": None if math.isnan(self.confidence) else self.confidence,
            "confidence_by_period": None
            if math.isnan(self.confidence_by_period)
            else self.confidence_by_period,
            "c_min": self.c_min,
        }


def adversary_view(trace: Trace) -> Trace:
    """What a passive observer actually sees: no cover flags, no ground truth."""
    events = tuple(
        replace(ev, is_cover=False) if ev.is_cover else ev for ev in trace.events
    )
    return Trace(events, trace.duration_us, labels=())


def evaluate_confidence(schedule: PaddingSchedule) -> float:
    """Fraction of padded spans that were triggered by real user activity.

    Returns NaN for an empty schedule (no attempted inferences).
    """
    if not schedule.spans:
        return math.nan
    return schedule.genuine_count / len(schedule.spans)


def evaluate_confidence_by_period(
    schedule: PaddingSchedule, labels: tuple[ActivityLabel, ...]
) -> float:
    """Fraction of padded period-slices that contain real user activity.

    Each span is cut into period-length slices (span lengths are multiples of
    the period); a slice counts as genuine when it intersects a label. This
    estimator remains meaningful at high padding probability where contiguous
    spans merge. Returns NaN when nothing is padded.
    """
    starts = np.array([lab.start_us for lab in labels], dtype=np.int64)
    ends = np.array([lab.end_us for lab in labels], dtype=np.int64)
    total = 0
    genuine = 0
    for span in schedule.spans:
        n = (span.end_us - span.start_us) // schedule.period_us
        total += n
        if not len(starts) or n == 0:
            continue
        s0 = span.start_us + np.arange(n, dtype=np.int64) * schedule.period_us
        # labels are disjoint and sorted, so ends are sorted too: the first
        # label ending after the slice start is the only intersection candidate
        idx = np.searchsorted(ends, s0, side="right")
        in_range = idx < len(starts)
        hit = in_range & (starts[np.minimum(idx, len(starts) - 1)] < s0 + schedule.period_us)
        genuine += int(np.count_nonzero(hit))
    if total == 0:
        return math.nan
    return genuine / total


def classify_spans(shaped: ShapedResult, detector: ThresholdDetector) -> InferenceReport:
    """Attack a shaped trace: detect rate anomalies and rate every padded span.

    Detection runs on the observer's view only (cover flags hidden, no
    labels); the confidence figures evaluate the schedule against the ground
    truth carried by the shaped trace.
    """
    view = adversary_view(shaped.trace)
    detected = tuple(detector.detect(view))
    verdicts = tuple("genuine" if s.genuine else "unknown" for s in shaped.schedule.spans)
    grid = segment_periods(shaped.trace, shaped.schedule.period_us)
    return InferenceReport(
        detected=detected,
        span_verdicts=verdicts,
        confidence=evaluate_confidence(shaped.schedule),
        confidence_by_period=evaluate_confidence_by_period(
            shaped.schedule, shaped.trace.labels
        ),
        c_min=grid.activity_fraction,
    )


class AmbiguityError(ValueError):
    """Fingerprint lookup matched several devices equally well."""

    def __init__(self, candidates: list[str]):
        super().__init__(f"ambiguous fingerprint; candidates: {', '.join(sorted(candidates))}")
        self.candidates = sorted(candidates)


@dataclass(frozen=True)
class DeviceSignature:
    unique_domains: frozenset[str]
    domain_set: frozenset[str]


@dataclass(frozen=True)
class FingerprintDb:
    entries: dict[str, DeviceSignature]

    def to_json(self) -> dict:
        return {
            name: {
                "unique": sorted(sig.unique_domains),
                "domains": sorted(sig.domain_set),
            }
            for name, sig in sorted(self.entries.items())
        }

    @classmethod
    def from_json(cls, payload: dict) -> "FingerprintDb":
        return cls(
            {
                name: DeviceSignature(
                    frozenset(entry.get("unique", [])), frozenset(entry.get("domains", []))
                )
                for name, entry in payload.items()
            }
        )


def save_fingerprint_db(db: FingerprintDb, path: Path | str) -> None:
    Path(path).write_text(json.dumps(db.to_json(), indent=2, sort_keys=True) + "\n")


def load_fingerprint_db(path: Path | str) -> FingerprintDb:
    return FingerprintDb.from_json(json.loads(Path(path).read_text()))


# Domains observed to uniquely identify common smart-home devices; each serves
# as a single-query fingerprint without needing the full destination set.
KNOWN_DEVICE_DOMAINS = {
    "Amcrest Security Camera": "dh.amcrestsecurity.com",
    "Amazon Echo": "device-metrics-us.amazon.com",
    "Belkin Wemo Switch": "prod1-fs-xbcs-net-1101221371",
    "D-Link Wi-Fi Camera": "signal.auto.mydlink.com",
    "Geeni Lux lightbulb": "a.gw.tuyaus.com",
    "Google Home": "clients1.google.com",
    "Nest Cam Indoor": "nexus.dropcam.com",
    "Orvibo Smart Socket": "wiwo.orvibo.com",
    "Phillips Hue Starter Set": "diagnostics.meethue.com",
    "Samsung SmartCam": "xmpp.samsungsmartcam.com",
    "Samsung SmartThings Hub": "dc.connect.smartthings.com",
    "Sense Sleep Monitor": "sense-in.hello.is",
    "TP-Link Smart Plug": "devs.tplinkcloud.com",
    "Wink Hub": "agent-v1-production.wink.com",
}


def reference_fingerprint_db() -> FingerprintDb:
    """Bundled fingerprint database built from the known identifying domains."""
    return FingerprintDb(
        {
            name: DeviceSignature(frozenset({domain}), frozenset({domain}))
            for name, domain in KNOWN_DEVICE_DOMAINS.items()
        }
    )


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def fingerprint_device(
    observed_domains: set[str], db: FingerprintDb
) -> tuple[str, str]:
    """Identify the device behind a set of contacted domains.

    Returns ``(device, method)`` with method ``"unique-domain"`` when a
    uniquely identifying domain was observed, else ``"set-similarity"`` via
    best Jaccard similarity. An empty observation (or zero similarity to
    every entry) yields ``("unknown", "none")``; equally good candidates
    raise :class:`AmbiguityError`.
    """
    if not db.entries:
        raise ValueError("fingerprint database is empty")
    if not observed_domains:
        return ("unknown", "none")

    observed = frozenset(observed_domains)
    unique_hits = [
        name for name, sig in db.entries.items() if sig.unique_domains & observed
    ]
    if len(unique_hits) == 1:
        return (unique_hits[0], "unique-domain")
    if len(unique_hits) > 1:
        raise AmbiguityError(unique_hits)

    scores = {name: _jaccard(observed, sig.domain_set) for name, sig in db.entries.items()}
    best = max(scores.values())
    if best == 0.0:
        return ("unknown", "none")
    candidates = [name for name, score in scores.items() if score == best]
    if len(candidates) > 1:
        raise AmbiguityError(candidates)
    return (candidates[0], "set-similarity")


__all__ = [
    "ThresholdDetector",
    "InferenceReport",
    "AmbiguityError",
    "DeviceSignature",
    "FingerprintDb",
    "KNOWN_DEVICE_DOMAINS",
    "detect_activities",
    "adversary_view",
    "classify_spans",
    "evaluate_confidence",
    "evaluate_confidence_by_period",
    "reference_fingerprint_db",
    "fingerprint_device",
    "save_fingerprint_db",
    "load_fingerprint_db",
]
