"""Adversary-confidence and bandwidth-overhead metrics, analytic and empirical.

The analytic model assumes user activity occurs independently each period
with probability p and non-activity padding fires independently with
probability q. Expected confidence is then p / (p + (1-p)q) and expected
overhead is the padded byte volume over the unpadded one. Confidence falls
with q as a power law while overhead grows linearly, so their ratio decays
roughly as 1/q^2.

``sweep`` reproduces the trade-off curve empirically: for every q it
generates seeded traces from a device profile, shapes them, attacks the
result, and reports mean and standard error next to the analytic curve.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .adversary import ThresholdDetector, classify_spans
from .decision import BernoulliDecision
from .generator import DeviceProfile, GeneratorConfig, generate_trace
from .shaping import ShapingConfig, stp_shape
from .trace import MICROSECONDS_PER_SECOND, Trace

_MASK64 = (1 << 64) - 1

# Detector used when attacking sweep runs; the oracle-driven schedule feeds
# the confidence metric, so detector settings only shape the raw detections.
_DEFAULT_DETECTOR = ThresholdDetector()


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix_seed(base: int, *parts: int) -> int:
    """Derive an independent 64-bit stream seed from a base seed and indices.

    Fixed splitmix64 chain; documented so any run can be reproduced exactly
    from (base_seed, point index, run index).
    """
    x = base & _MASK64
    for part in parts:
        x = _splitmix64(x ^ (part & _MASK64))
    return x


@dataclass(frozen=True)
class AnalyticParams:
    """Inputs of the closed-form confidence/overhead model.

    ``rate`` (bytes/s, both directions combined) and ``period_us`` determine
    the bytes one padded period carries; ``activity_bytes`` and
    ``background_bytes`` are the mean per-period byte volumes during activity
    and background periods before shaping.
    """

    activity_probability: float  # p
    padding_probability: float  # q
    rate: float
    period_us: int
    activity_bytes: float
    background_bytes: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.activity_probability <= 1.0:
            raise ValueError("activity probability must be in [0,1]")
        if not 0.0 <= self.padding_probability <= 1.0:
            raise ValueError("padding probability must be in [0,1]")
        if min(self.rate, self.period_us, self.activity_bytes, self.background_bytes) < 0:
            raise ValueError("rates, periods and byte volumes must be >= 0")

    @property
    def pattern_bytes(self) -> float:
        """Bytes one padding pattern carries: rate * period."""
        return self.rate * self.period_us / MICROSECONDS_PER_SECOND

    @classmethod
    def normalized(
        cls,
        activity_probability: float,
        padding_probability: float,
        pattern_bytes: float = 1.0,
        activity_bytes: float = 0.9,
        background_bytes: float = 0.0,
    ) -> "AnalyticParams":
        """Dimensionless setup: one period lasts 1 s and carries ``pattern_bytes``."""
        return cls(
            activity_probability,
            padding_probability,
            rate=pattern_bytes,
            period_us=MICROSECONDS_PER_SECOND,
            activity_bytes=activity_bytes,
            background_bytes=background_bytes,
        )


def analytic_confidence(params: AnalyticParams) -> float:
    """Expected fraction of padded periods that contain real activity.

    Exact at the endpoints: 1 when padding never fires (every padded period
    is real activity), p when padding always fires. NaN when there is neither
    activity nor padding.
    """
    p = params.activity_probability
    q = params.padding_probability
    if p == 0.0:
        return math.nan if q == 0.0 else 0.0
    if q == 0.0:
        return 1.0
    if q == 1.0:
        return p  # p / (p + (1-p)) reduces algebraically
    return p / (p + (1.0 - p) * q)


def analytic_overhead(params: AnalyticParams) -> float:
    """Expected padded-to-unpadded byte ratio; NaN when no bytes are sent."""
    p = params.activity_probability
    q = params.padding_probability
    rt = params.pattern_bytes
    d_a = params.activity_bytes
    d_na = params.background_bytes
    denominator = p * d_a + (1.0 - p) * d_na
    if denominator == 0.0:
        return math.nan
    numerator = p * rt + (1.0 - p) * q * rt + (1.0 - p) * (1.0 - q) * d_na
    return numerator / denominator


def empirical_overhead(original: Trace, shaped: Trace) -> float:
    """Total shaped bytes (real plus cover) over total original bytes."""
    original_bytes = original.total_bytes
    if original_bytes == 0:
        return math.nan
    return shaped.total_bytes / original_bytes


@dataclass(frozen=True)
class TradeoffPoint:
    """One (q -> confidence, overhead) measurement on the trade-off curve."""

    q: float
    confidence: float
    overhead: float
    kind: str  # "analytic" | "empirical"
    runs: int = 0
    confidence_stderr: float = 0.0
    overhead_stderr: float = 0.0
    error: str = ""

    def to_json(self) -> dict:
        def _num(x: float):
            return None if math.isnan(x) else x

        return {
            "q": self.q,
            "kind": self.kind,
            "confidence": _num(self.confidence),
            "confidence_stderr": self.confidence_stderr,
            "overhead": _num(self.overhead),
            "overhead_stderr": self.overhead_stderr,
            "runs": self.runs,
            "error": self.error,
        }


def analytic_sweep(params: AnalyticParams, q_grid: list[float]) -> list[TradeoffPoint]:
    """Closed-form trade-off points for each q, holding the rest of params fixed."""
    points = []
    for q in sorted(q_grid):
        varied = replace(params, padding_probability=q)
        points.append(
            TradeoffPoint(
                q=q,
                confidence=analytic_confidence(varied),
                overhead=analytic_overhead(varied),
                kind="analytic",
            )
        )
    return points


def profile_analytic_params(
    profile: DeviceProfile, activity_probability: float, config: ShapingConfig
) -> AnalyticParams:
    """Analytic parameters implied by a device profile and shaping config.

    The activity probability is taken as configured (not re-estimated), the
    activity byte volume is the mean segment size, and background bytes per
    period derive from the profile's constant background rates. Background
    inside padded periods is absorbed into the pattern budget.
    """
    background = (
        (profile.background_rate_up + profile.background_rate_down)
        * config.period_us
        / MICROSECONDS_PER_SECOND
    )
    return AnalyticParams(
        activity_probability=activity_probability,
        padding_probability=0.0,
        rate=config.rate_total,
        period_us=config.period_us,
        activity_bytes=profile.mean_segment_bytes,
        background_bytes=background,
    )


def _run_point(
    args: tuple[DeviceProfile, float, float, int, ShapingConfig, int, int],
) -> TradeoffPoint:
    profile, p, q, runs, config, duration_us, base_seed = args
    point_key = round(q * 10**9)
    confidences = []
    overheads = []
    try:
        for j in range(runs):
            gen_cfg = GeneratorConfig(
                activity_probability=p,
                duration_us=duration_us,
                decision_tick_us=config.period_us,
                seed=mix_seed(base_seed, point_key, j, 0),
            )
            trace = generate_trace(profile, gen_cfg)
            run_cfg = replace(
                config,
                seed=mix_seed(base_seed, point_key, j, 1),
                decision=BernoulliDecision(q, seed=mix_seed(base_seed, point_key, j, 2)),
            )
            shaped = stp_shape(trace, run_cfg)
            report = classify_spans(shaped, _DEFAULT_DETECTOR)
            confidences.append(report.confidence_by_period)
            overheads.append(empirical_overhead(trace, shaped.trace))
    except Exception as exc:  # a failed point is recorded, the sweep continues
        return TradeoffPoint(q, math.nan, math.nan, "empirical", 0, error=str(exc))

    conf = np.asarray(confidences, dtype=float)
    over = np.asarray(overheads, dtype=float)
    return TradeoffPoint(
        q=q,
        confidence=float(np.nanmean(conf)),
        overhead=float(np.nanmean(over)),
        kind="empirical",
        runs=runs,
        confidence_stderr=_stderr(conf),
        overhead_stderr=_stderr(over),
    )


def _stderr(values: np.ndarray) -> float:
    values = values[~np.isnan(values)]
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def sweep(
    profile: DeviceProfile,
    activity_probability: float,
    q_grid: list[float],
    runs: int,
    config: ShapingConfig,
    *,
    duration_us: int,
    parallel: int = 1,
) -> list[TradeoffPoint]:
    """Empirical plus analytic trade-off curve over a q grid.

    For each q, ``runs`` traces are generated with the profile (decision tick
    equal to the shaping period so activity and padding share the same grid),
    shaped with a Bernoulli(q) decision function, and attacked. Seeds derive
    from ``config.seed`` via :func:`mix_seed`; results are independent of the
    degree of parallelism. The confidence reported per point is the
    period-slice estimate, which stays consistent as spans merge at high q.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if not q_grid:
        raise ValueError("q grid must not be empty")
    if any(not 0.0 <= q <= 1.0 for q in q_grid):
        raise ValueError("q values must lie in [0,1]")

    jobs = [
        (profile, activity_probability, q, runs, config, duration_us, config.seed)
        for q in q_grid
    ]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            points = list(pool.map(_run_point, jobs))
    else:
        points = [_run_point(job) for job in jobs]

    params = profile_analytic_params(profile, activity_probability, config)
    points.extend(analytic_sweep(params, list(q_grid)))
    points.sort(key=lambda pt: (pt.q, pt.kind))
    return points


TRADEOFF_HEADER = [
    "q",
    "kind",
    "confidence",
    "confidence_stderr",
    "overhead",
    "overhead_stderr",
    "runs",
]


def write_tradeoff_csv(points: list[TradeoffPoint], path: Path | str) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRADEOFF_HEADER)
        for pt in points:
            writer.writerow(
                [
                    repr(pt.q),
                    pt.kind,
                    repr(pt.confidence),
                    repr(pt.confidence_stderr),
                    repr(pt.overhead),
                    repr(pt.overhead_stderr),
                    pt.runs,
                ]
            )


def write_tradeoff_json(
    points: list[TradeoffPoint], path: Path | str, params: AnalyticParams | None = None
) -> None:
    payload: dict = {"points": [pt.to_json() for pt in points]}
    if params is not None:
        payload["analytic_params"] = {
            "activity_probability": params.activity_probability,
            "rate": params.rate,
            "period_us": params.period_us,
            "activity_bytes": params.activity_bytes,
            "background_bytes": params.background_bytes,
        }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


__all__ = [
    "AnalyticParams",
    "TradeoffPoint",
    "TRADEOFF_HEADER",
    "mix_seed",
    "analytic_confidence",
    "analytic_overhead",
    "empirical_overhead",
    "analytic_sweep",
    "profile_analytic_params",
    "sweep",
    "write_tradeoff_csv",
    "write_tradeoff_json",
]
