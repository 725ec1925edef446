"""trace module: parsing, round-trips, rate binning, period segmentation."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stpad.trace import (
    ActivityLabel,
    Trace,
    TraceEvent,
    TraceParseError,
    compute_stats,
    load_trace,
    rate_series,
    save_trace,
    segment_periods,
)

GOLDEN_CSV = (
    "timestamp_us,direction,bytes,flow_id,is_cover\n"
    "0,up,100,wemo,0\n"
    "1000000,down,200,wemo,0\n"
)


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_empty_file_zero_events(tmp_path):
    path = _write(tmp_path, "empty.csv", "timestamp_us,direction,bytes,flow_id,is_cover\n")
    trace = load_trace(path)
    assert trace.events == ()
    assert trace.duration_us == 0


def test_two_event_fixture_duration_and_roundtrip(tmp_path):
    path = _write(tmp_path, "two.csv", GOLDEN_CSV)
    trace = load_trace(path)
    assert len(trace.events) == 2
    assert trace.duration_us == 1_000_001
    assert trace.events[0] == TraceEvent(0, "up", 100, "wemo")
    assert trace.events[1] == TraceEvent(1_000_000, "down", 200, "wemo")

    out = tmp_path / "copy.csv"
    save_trace(trace, out)
    assert out.read_bytes() == path.read_bytes()


def test_malformed_row_names_line(tmp_path):
    path = _write(
        tmp_path,
        "bad.csv",
        "timestamp_us,direction,bytes,flow_id,is_cover\nabc,up,100,x,0\n",
    )
    with pytest.raises(TraceParseError) as err:
        load_trace(path)
    assert err.value.line == 2


def test_bad_header_rejected(tmp_path):
    path = _write(tmp_path, "hdr.csv", "time,dir,b,f,c\n")
    with pytest.raises(TraceParseError) as err:
        load_trace(path)
    assert err.value.line == 1


def test_non_monotonic_rows_resorted_with_flag(tmp_path):
    path = _write(
        tmp_path,
        "unsorted.csv",
        "timestamp_us,direction,bytes,flow_id,is_cover\n"
        "5000,up,10,a,0\n"
        "1000,down,20,a,0\n",
    )
    trace = load_trace(path)
    assert trace.resorted
    assert [ev.timestamp_us for ev in trace.events] == [1000, 5000]


def test_labels_loaded_from_companion_file(tmp_path):
    _write(tmp_path, "t.labels.csv", "start_us,end_us,kind\n1000,2000,toggle\n")
    path = _write(tmp_path, "t.csv", GOLDEN_CSV)
    trace = load_trace(path)
    assert trace.labels == (ActivityLabel(1000, 2000, "toggle"),)


def test_trace_invariants_enforced():
    with pytest.raises(ValueError):
        Trace((TraceEvent(5, "up", 1, "a"), TraceEvent(1, "up", 1, "a")), 10)
    with pytest.raises(ValueError):
        Trace((TraceEvent(5, "up", 1, "a"),), 5)  # timestamp must be < duration
    with pytest.raises(ValueError):
        Trace((), 10, (ActivityLabel(0, 5, "x"), ActivityLabel(3, 8, "y")))
    with pytest.raises(ValueError):
        TraceEvent(0, "sideways", 1, "a")
    with pytest.raises(ValueError):
        TraceEvent(0, "up", 0, "a")


def test_rate_series_empty_trace():
    assert len(rate_series(Trace((), 0), 1_000_000)) == 0


def test_rate_series_single_event_placement():
    trace = Trace((TraceEvent(1_500_000, "up", 500, "x"),), 1_500_001)
    assert rate_series(trace, 1_000_000).tolist() == [0, 500]


def test_rate_series_matches_bruteforce_accumulation(rng):
    events = tuple(
        sorted(
            (
                TraceEvent(int(rng.integers(0, 10_000_000)), rng.choice(["up", "down"]), int(rng.integers(1, 2000)), "x")
                for _ in range(10)
            ),
            key=lambda ev: ev.timestamp_us,
        )
    )
    trace = Trace(events, 10_000_000)
    bin_us = 1_000_000
    for direction in ("up", "down", "both"):
        # independent oracle: accumulate event by event
        expected = [0] * 10
        for ev in events:
            if direction != "both" and ev.direction != direction:
                continue
            expected[ev.timestamp_us // bin_us] += ev.size
        assert rate_series(trace, bin_us, direction).tolist() == expected


def test_rate_series_validation():
    trace = Trace((), 0)
    with pytest.raises(ValueError):
        rate_series(trace, 0)
    with pytest.raises(ValueError):
        rate_series(trace, 1000, "sideways")


_event_strategy = st.builds(
    TraceEvent,
    timestamp_us=st.integers(min_value=0, max_value=99_999),
    direction=st.sampled_from(["up", "down"]),
    size=st.integers(min_value=1, max_value=5000),
    flow_id=st.just("dev"),
)


@given(st.lists(_event_strategy, max_size=40), st.integers(min_value=1, max_value=40_000))
@settings(max_examples=100, deadline=None)
def test_rate_series_conserves_bytes(events, bin_us):
    events = tuple(sorted(events, key=lambda ev: ev.timestamp_us))
    duration = events[-1].timestamp_us + 1 if events else 0
    trace = Trace(events, duration)
    total = sum(ev.size for ev in events)
    assert int(rate_series(trace, bin_us).sum()) == total
    assert int(rate_series(trace, bin_us, "up").sum() + rate_series(trace, bin_us, "down").sum()) == total


def test_segment_periods_counts():
    trace = Trace((), 100_000_000)
    grid = segment_periods(trace, 10_000_000)
    assert grid.period_count == 10
    assert not grid.activity_flags.any()


def test_segment_periods_label_flags():
    label = ActivityLabel(12_000_000, 14_000_000, "x")
    trace = Trace((), 100_000_000, (label,))
    grid = segment_periods(trace, 10_000_000)
    assert grid.activity_flags.tolist() == [False, True] + [False] * 8


def test_segment_periods_rejects_zero_period():
    with pytest.raises(ValueError):
        segment_periods(Trace((), 1000), 0)


@given(
    st.lists(
        st.tuples(st.integers(0, 900), st.integers(1, 100), st.text("ab", min_size=1, max_size=2)),
        max_size=5,
    ),
    st.integers(min_value=1, max_value=200),
)
@settings(max_examples=150, deadline=None)
def test_segment_periods_matches_interval_oracle(raw_labels, period):
    # build disjoint labels from (gap, length) pairs
    labels = []
    cursor = 0
    for gap, length, kind in raw_labels:
        start = cursor + gap
        labels.append(ActivityLabel(start, start + length, kind))
        cursor = start + length
    duration = max(1000, cursor)
    trace = Trace((), duration, tuple(labels))
    grid = segment_periods(trace, period)
    for i in range(grid.period_count):
        lo, hi = i * period, (i + 1) * period
        expected = any(lab.start_us < hi and lab.end_us > lo for lab in labels)
        assert bool(grid.activity_flags[i]) == expected


def test_compute_stats_uniform_activity():
    events = tuple(TraceEvent(i * 10_000_000 + 100, "up", 900, "d") for i in range(10))
    labels = tuple(ActivityLabel(i * 10_000_000, i * 10_000_000 + 10_000_000, "x") for i in range(10))
    trace = Trace(events, 100_000_000, labels)
    stats = compute_stats(trace, segment_periods(trace, 10_000_000))
    assert stats.mean_activity_bytes == 900
    assert stats.activity_fraction == 1.0
    assert stats.activity_defined
    assert not stats.background_defined


def test_compute_stats_no_labels_marker():
    trace = Trace((TraceEvent(0, "up", 10, "d"),), 10_000_000)
    stats = compute_stats(trace, segment_periods(trace, 1_000_000))
    assert stats.activity_fraction == 0.0
    assert not stats.activity_defined
    assert stats.mean_activity_bytes == 0.0


def test_compute_stats_matches_per_period_summation(rng):
    events = tuple(
        sorted(
            (
                TraceEvent(int(rng.integers(0, 50_000_000)), rng.choice(["up", "down"]), int(rng.integers(1, 3000)), "d")
                for _ in range(60)
            ),
            key=lambda ev: ev.timestamp_us,
        )
    )
    labels = (ActivityLabel(5_000_000, 9_000_000, "a"), ActivityLabel(20_000_000, 31_000_000, "b"))
    trace = Trace(events, 50_000_000, labels)
    period = 10_000_000
    grid = segment_periods(trace, period)
    stats = compute_stats(trace, grid)

    # spreadsheet-style oracle: per-period sums, then split by flags
    sums = [0] * grid.period_count
    for ev in events:
        sums[ev.timestamp_us // period] += ev.size
    active = [s for s, f in zip(sums, grid.activity_flags) if f]
    quiet = [s for s, f in zip(sums, grid.activity_flags) if not f]
    assert stats.mean_activity_bytes == pytest.approx(np.mean(active))
    assert stats.mean_background_bytes == pytest.approx(np.mean(quiet))
    assert stats.activity_fraction == pytest.approx(len(active) / grid.period_count)

    rates = [
        sum(ev.size for ev in events if lab.start_us <= ev.timestamp_us < lab.end_us)
        / ((lab.end_us - lab.start_us) / 1e6)
        for lab in labels
    ]
    expected_ratio = np.std(rates) / np.mean(rates)
    assert stats.activity_rate_stddev_ratio == pytest.approx(expected_ratio)


def test_stats_json_keys():
    trace = Trace((), 1_000_000)
    stats = compute_stats(trace, segment_periods(trace, 1_000_000))
    payload = stats.to_json()
    assert set(payload) == {
        "mean_activity_bytes",
        "mean_background_bytes",
        "activity_fraction",
        "peak_rate_up",
        "peak_rate_down",
        "activity_rate_stddev_ratio",
        "activity_defined",
        "background_defined",
    }
