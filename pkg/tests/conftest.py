"""Shared fixtures: synthetic device profiles with controlled rate variance."""

from __future__ import annotations

import numpy as np
import pytest

from stpad.generator import ActivitySegment, DeviceProfile
from stpad.trace import TraceEvent

# Zero-mean, unit-variance pattern used to spread per-activity byte totals.
_SPREAD = (-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)


def make_profile(
    name: str = "wemo",
    mean_bytes: int = 2300,
    stddev_ratio: float = 0.047,
    duration_us: int = 1_000_000,
    up_fraction: float = 0.6,
) -> DeviceProfile:
    """Profile with 7 one-activity segments whose per-activity mean rates have
    the requested stddev/mean ratio (activities last ``duration_us``)."""
    segments = []
    for i, z in enumerate(_SPREAD):
        total = max(10, round(mean_bytes * (1.0 + stddev_ratio * z)))
        up = max(1, round(total * up_fraction))
        down = max(1, total - up)
        step = duration_us // 4
        events = (
            TraceEvent(0, "up", up // 2, name),
            TraceEvent(step, "down", down, name),
            TraceEvent(2 * step, "up", up - up // 2, name),
        )
        segments.append(ActivitySegment(events, duration_us, f"activity{i}"))
    return DeviceProfile(name, tuple(segments))


@pytest.fixture
def wemo_profile() -> DeviceProfile:
    """Switch-like device: short activities, tight rate spread."""
    return make_profile()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
