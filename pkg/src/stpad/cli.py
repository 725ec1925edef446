"""Command-line front end: generate traces, apply defenses, attack, sweep.

Subcommands: generate | shape | attack | sweep | fingerprint. Every run
writes a ``manifest.json`` capturing the resolved parameters, the seed, and
SHA-256 digests of all inputs and outputs, so any run can be replayed
byte-identically with :func:`replay_from_manifest`.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .adversary import (
    ThresholdDetector,
    classify_spans,
    detect_activities,
    fingerprint_device,
    load_fingerprint_db,
    reference_fingerprint_db,
)
from .decision import BernoulliDecision, load_hmm
from .generator import GeneratorConfig, generate_trace, load_profile
from .metrics import (
    AnalyticParams,
    analytic_sweep,
    profile_analytic_params,
    sweep,
    write_tradeoff_csv,
    write_tradeoff_json,
)
from .shaping import (
    ORACLE_DETECTOR,
    ShapedResult,
    ShapingConfig,
    firewall_filter,
    ilp_shape,
    load_schedule,
    save_overflows,
    save_schedule,
    stp_shape,
    vpn_aggregate,
)
from .trace import MICROSECONDS_PER_SECOND, Trace, compute_stats, load_trace, save_labels, save_trace, segment_periods

_DURATION_SUFFIXES = {"us": 1, "ms": 1_000, "s": MICROSECONDS_PER_SECOND}


def parse_duration(text: str) -> int:
    """Duration with unit suffix (s, ms, us) or bare microseconds."""
    raw = text.strip()
    for suffix, scale in sorted(_DURATION_SUFFIXES.items(), key=lambda kv: -len(kv[0])):
        if raw.endswith(suffix):
            try:
                value = float(raw[: -len(suffix)])
            except ValueError as exc:
                raise argparse.ArgumentTypeError(f"bad duration {text!r}") from exc
            return int(round(value * scale))
    try:
        return int(raw)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}") from exc


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"probability must be in [0,1]: {value}")
    return value


def parse_q_grid(text: str) -> list[float]:
    """Either a comma list ("0,0.05,1") or "start:stop:step" inclusive."""
    raw = text.strip()
    if not raw:
        raise argparse.ArgumentTypeError("empty q grid")
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"grid must be start:stop:step, got {text!r}")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc
        if step <= 0:
            raise argparse.ArgumentTypeError("grid step must be > 0")
        count = int(round((stop - start) / step))
        values = [round(start + i * step, 12) for i in range(count + 1) if start + i * step <= stop + 1e-12]
    else:
        try:
            values = [float(p) for p in raw.split(",") if p.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty q grid")
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("q values must lie in [0,1]")
    return values


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    return int.from_bytes(os.urandom(8), "little") >> 1


def _write_manifest(
    out_dir: Path,
    command: str,
    parameters: dict,
    seed: int,
    argv: list[str],
    inputs: list[Path],
    outputs: list[Path],
) -> Path:
    manifest = {
        "command": command,
        "parameters": parameters,
        "base_seed": seed,
        "tool_version": __version__,
        "argv": argv,
        "inputs": {p.name: _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _effective_argv(args: argparse.Namespace, seed: int) -> list[str]:
    """Reconstructable argv: original flags with the seed pinned, out-dir dropped."""
    argv = [args.command]
    skip_next = False
    for token in args._argv[1:]:
        if skip_next:
            skip_next = False
            continue
        if token in ("--out-dir", "--seed"):
            skip_next = True
            continue
        if token.startswith("--out-dir=") or token.startswith("--seed="):
            continue
        argv.append(token)
    argv += ["--seed", str(seed)]
    return argv


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_generate(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    seed = _resolve_seed(args.seed)
    profile_path = Path(args.profile)
    profile = load_profile(profile_path)
    config = GeneratorConfig(
        activity_probability=args.p,
        duration_us=args.duration,
        decision_tick_us=args.tick,
        seed=seed,
    )
    trace = generate_trace(profile, config)
    trace_path = out / "trace.csv"
    labels_path = out / "trace.labels.csv"
    save_trace(trace, trace_path, with_labels=False)
    save_labels(trace.labels, labels_path)
    parameters = {
        "profile": str(profile_path),
        "p": args.p,
        "duration_us": args.duration,
        "tick_us": args.tick,
        "seed": seed,
        "format": args.format,
    }
    _write_manifest(
        out, "generate", parameters, seed, _effective_argv(args, seed),
        [profile_path], [trace_path, labels_path],
    )
    return 0


def _build_detector(args: argparse.Namespace):
    if args.detector == ORACLE_DETECTOR:
        return ORACLE_DETECTOR
    return ThresholdDetector(bin_us=args.det_bin, k=args.det_k, min_quiet_gap_us=args.det_gap)


def _default_rates(trace: Trace, args: argparse.Namespace) -> tuple[float, float]:
    """Fall back to the peak observed per-direction 1 s rates."""
    rate_up, rate_down = args.rate_up, args.rate_down
    if rate_up is None or rate_down is None:
        stats = compute_stats(trace, segment_periods(trace, MICROSECONDS_PER_SECOND))
        if rate_up is None:
            rate_up = stats.peak_rate_up
        if rate_down is None:
            rate_down = stats.peak_rate_down
    return rate_up, rate_down


def _cmd_shape(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    seed = _resolve_seed(args.seed)
    trace_paths = [Path(p) for p in args.trace]
    for path in trace_paths:
        if not path.exists():
            print(f"error: trace file not found: {path}", file=sys.stderr)
            return 1
    if args.defense != "vpn" and len(trace_paths) != 1:
        print("error: only the vpn defense accepts multiple --trace inputs", file=sys.stderr)
        return 1

    traces = [load_trace(p) for p in trace_paths]
    inputs = []
    for p in trace_paths:
        inputs.append(p)
        label_file = p.with_name(p.stem + ".labels.csv")
        if label_file.exists():
            inputs.append(label_file)

    shaped_path = out / "shaped.csv"
    labels_path = out / "shaped.labels.csv"
    outputs = [shaped_path]
    parameters: dict = {
        "defense": args.defense,
        "traces": [str(p) for p in trace_paths],
        "seed": seed,
        "format": args.format,
    }

    result: ShapedResult | None = None
    if args.defense == "stp":
        trace = traces[0]
        if args.detector == ORACLE_DETECTOR and not trace.labels:
            print("error: labels required for the oracle activity detector", file=sys.stderr)
            return 1
        rate_up, rate_down = _default_rates(trace, args)
        if args.hmm:
            decision = load_hmm(Path(args.hmm)).fresh(seed=seed)
            inputs.append(Path(args.hmm))
        else:
            decision = BernoulliDecision(args.q, seed=seed)
        config = ShapingConfig(
            rate_up=rate_up,
            rate_down=rate_down,
            period_us=args.period,
            decision=decision,
            detector=_build_detector(args),
            cover_packet_size=args.cover_size,
            seed=seed,
        )
        result = stp_shape(trace, config)
        parameters.update(
            {
                "q": args.q,
                "hmm": args.hmm,
                "period_us": args.period,
                "rate_up": rate_up,
                "rate_down": rate_down,
                "detector": args.detector,
                "cover_packet_size": args.cover_size,
            }
        )
    elif args.defense == "ilp":
        trace = traces[0]
        rate_up, rate_down = _default_rates(trace, args)
        result = ilp_shape(
            trace, rate_up, rate_down, cover_packet_size=args.cover_size
        )
        parameters.update(
            {"rate_up": rate_up, "rate_down": rate_down, "cover_packet_size": args.cover_size}
        )
    elif args.defense == "firewall":
        filtered = firewall_filter(traces[0])
        save_trace(filtered, shaped_path, with_labels=False)
        save_labels(filtered.labels, labels_path)
        outputs.append(labels_path)
    elif args.defense == "vpn":
        merged = vpn_aggregate(
            [(p.stem, t) for p, t in zip(trace_paths, traces)],
            encapsulation_bytes=args.encap,
        )
        parameters.update({"encapsulation_bytes": args.encap})
        save_trace(merged, shaped_path, with_labels=False)
        save_labels(merged.labels, labels_path)
        outputs.append(labels_path)

    if result is not None:
        save_trace(result.trace, shaped_path, with_labels=False)
        save_labels(result.trace.labels, labels_path)
        schedule_path = out / "schedule.csv"
        overflow_path = out / "overflow.json"
        save_schedule(result.schedule, schedule_path)
        save_overflows(result.overflows, overflow_path)
        outputs += [labels_path, schedule_path, overflow_path]

    _write_manifest(out, "shape", parameters, seed, _effective_argv(args, seed), inputs, outputs)
    return 0


def _cmd_attack(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    seed = _resolve_seed(args.seed)
    trace_path = Path(args.trace)
    if not trace_path.exists():
        print(f"error: trace file not found: {trace_path}", file=sys.stderr)
        return 1
    trace = load_trace(trace_path)
    detector = ThresholdDetector(bin_us=args.det_bin, k=args.det_k, min_quiet_gap_us=args.det_gap)

    inputs = [trace_path]
    label_file = trace_path.with_name(trace_path.stem + ".labels.csv")
    if label_file.exists():
        inputs.append(label_file)

    if args.schedule:
        schedule_path = Path(args.schedule)
        if not schedule_path.exists():
            print(f"error: schedule file not found: {schedule_path}", file=sys.stderr)
            return 1
        schedule = load_schedule(schedule_path, args.period)
        inputs.append(schedule_path)
        shaped = ShapedResult(trace=trace, schedule=schedule, overflows=())
        report = classify_spans(shaped, detector).to_json()
    else:
        detected = detect_activities(trace, detector)
        report = {"detected": [list(iv) for iv in detected]}

    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    parameters = {
        "trace": str(trace_path),
        "schedule": args.schedule,
        "period_us": args.period if args.schedule else None,
        "det_bin_us": args.det_bin,
        "det_k": args.det_k,
        "det_gap_us": args.det_gap,
        "seed": seed,
        "format": args.format,
    }
    _write_manifest(out, "attack", parameters, seed, _effective_argv(args, seed), inputs, [report_path])
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    seed = _resolve_seed(args.seed)
    q_grid = args.q_grid

    inputs: list[Path] = []
    if args.analytic:
        params = AnalyticParams.normalized(
            args.p, 0.0, pattern_bytes=args.rt, activity_bytes=args.da, background_bytes=args.dna
        )
        points = analytic_sweep(params, q_grid)
    else:
        if not args.profile:
            print("error: --profile is required for empirical sweeps", file=sys.stderr)
            return 1
        profile_path = Path(args.profile)
        if not profile_path.exists():
            print(f"error: profile not found: {profile_path}", file=sys.stderr)
            return 1
        inputs.append(profile_path)
        profile = load_profile(profile_path)
        rate_up = args.rate_up if args.rate_up is not None else profile.peak_rate[0]
        rate_down = args.rate_down if args.rate_down is not None else profile.peak_rate[1]
        config = ShapingConfig(
            rate_up=rate_up,
            rate_down=rate_down,
            period_us=args.period,
            decision=BernoulliDecision(0.0, seed=seed),
            detector=ORACLE_DETECTOR,
            cover_packet_size=args.cover_size,
            seed=seed,
        )
        points = sweep(
            profile,
            args.p,
            q_grid,
            args.runs,
            config,
            duration_us=args.duration,
            parallel=args.parallel,
        )
        params = profile_analytic_params(profile, args.p, config)
        empirical = [pt for pt in points if pt.kind == "empirical"]
        if empirical and all(pt.error for pt in empirical):
            print("error: every sweep point failed", file=sys.stderr)
            return 1

    csv_path = out / "sweep.csv"
    write_tradeoff_csv(points, csv_path)
    outputs = [csv_path]
    if args.format == "json":
        json_path = out / "sweep.json"
        write_tradeoff_json(points, json_path, params)
        outputs.append(json_path)

    parameters = {
        "analytic": args.analytic,
        "p": args.p,
        "q_grid": q_grid,
        "runs": None if args.analytic else args.runs,
        "duration_us": None if args.analytic else args.duration,
        "period_us": None if args.analytic else args.period,
        "rt": args.rt if args.analytic else None,
        "da": args.da if args.analytic else None,
        "dna": args.dna if args.analytic else None,
        "profile": args.profile,
        "parallel": args.parallel,
        "seed": seed,
        "format": args.format,
    }
    _write_manifest(out, "sweep", parameters, seed, _effective_argv(args, seed), inputs, outputs)
    return 0


def _cmd_fingerprint(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    seed = _resolve_seed(args.seed)
    domains_path = Path(args.domains)
    if not domains_path.exists():
        print(f"error: domain file not found: {domains_path}", file=sys.stderr)
        return 1
    observed = {
        line.strip() for line in domains_path.read_text().splitlines() if line.strip()
    }
    inputs = [domains_path]
    if args.db:
        db_path = Path(args.db)
        if not db_path.exists():
            print(f"error: fingerprint db not found: {db_path}", file=sys.stderr)
            return 1
        db = load_fingerprint_db(db_path)
        inputs.append(db_path)
    else:
        db = reference_fingerprint_db()

    device, method = fingerprint_device(observed, db)
    result_path = out / "fingerprint.json"
    result_path.write_text(
        json.dumps({"device": device, "method": method}, indent=2, sort_keys=True) + "\n"
    )
    parameters = {
        "domains": str(domains_path),
        "db": args.db,
        "seed": seed,
        "format": args.format,
    }
    _write_manifest(
        out, "fingerprint", parameters, seed, _effective_argv(args, seed), inputs, [result_path]
    )
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (auto-generated and recorded if omitted)")
    parser.add_argument("--out-dir", default=".", help="output directory")
    parser.add_argument("--format", choices=["csv", "json"], default="csv", help="extra output format")


def _add_detector_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--det-bin", type=parse_duration, default=MICROSECONDS_PER_SECOND, help="detector bin width")
    parser.add_argument("--det-k", type=float, default=3.0, help="detector stddev multiplier")
    parser.add_argument("--det-gap", type=parse_duration, default=2 * MICROSECONDS_PER_SECOND, help="detector merge gap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stpad", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="synthesize a device trace from a profile")
    p_gen.add_argument("--profile", required=True, help="device profile JSON")
    p_gen.add_argument("--p", type=_probability, required=True, help="per-tick activity probability")
    p_gen.add_argument("--duration", type=parse_duration, required=True, help="trace duration (e.g. 10000s)")
    p_gen.add_argument("--tick", type=parse_duration, default=MICROSECONDS_PER_SECOND, help="decision tick")
    _add_common(p_gen)
    p_gen.set_defaults(func=_cmd_generate)

    p_shape = sub.add_parser("shape", help="apply a defense to one or more traces")
    p_shape.add_argument("--defense", choices=["stp", "ilp", "firewall", "vpn"], required=True)
    p_shape.add_argument("--trace", action="append", required=True, help="trace CSV (repeatable for vpn)")
    p_shape.add_argument("--q", type=_probability, default=0.0, help="non-activity padding probability")
    p_shape.add_argument("--hmm", default=None, help="HMM decision model JSON (overrides --q)")
    p_shape.add_argument("--T", dest="period", type=parse_duration, default=10 * MICROSECONDS_PER_SECOND, help="padding period T")
    p_shape.add_argument("--rate-up", type=float, default=None, help="upload pattern rate bytes/s (default: peak)")
    p_shape.add_argument("--rate-down", type=float, default=None, help="download pattern rate bytes/s (default: peak)")
    p_shape.add_argument("--detector", choices=[ORACLE_DETECTOR, "threshold"], default=ORACLE_DETECTOR)
    p_shape.add_argument("--cover-size", type=int, default=1400, help="cover packet size in bytes")
    p_shape.add_argument("--encap", type=int, default=0, help="per-packet VPN encapsulation bytes")
    _add_detector_flags(p_shape)
    _add_common(p_shape)
    p_shape.set_defaults(func=_cmd_shape)

    p_attack = sub.add_parser("attack", help="run the activity-inference attack")
    p_attack.add_argument("--trace", required=True, help="raw or shaped trace CSV")
    p_attack.add_argument("--schedule", default=None, help="padding schedule CSV (enables confidence scoring)")
    p_attack.add_argument("--T", dest="period", type=parse_duration, default=None, help="padding period of the schedule")
    _add_detector_flags(p_attack)
    _add_common(p_attack)
    p_attack.set_defaults(func=_cmd_attack)

    p_sweep = sub.add_parser("sweep", help="trade-off curve over a q grid")
    p_sweep.add_argument("--analytic", action="store_true", help="closed-form curve only")
    p_sweep.add_argument("--p", type=_probability, required=True)
    p_sweep.add_argument("--q-grid", type=parse_q_grid, default=parse_q_grid("0:1:0.01"), help="e.g. 0:1:0.01 or 0,0.5,1")
    p_sweep.add_argument("--rt", type=float, default=1.0, help="pattern bytes per period (analytic)")
    p_sweep.add_argument("--da", type=float, default=0.9, help="activity bytes per period (analytic)")
    p_sweep.add_argument("--dna", type=float, default=0.0, help="background bytes per period (analytic)")
    p_sweep.add_argument("--profile", default=None, help="device profile JSON (empirical)")
    p_sweep.add_argument("--runs", type=int, default=50, help="traces per point (empirical)")
    p_sweep.add_argument("--duration", type=parse_duration, default=10_000 * MICROSECONDS_PER_SECOND)
    p_sweep.add_argument("--T", dest="period", type=parse_duration, default=10 * MICROSECONDS_PER_SECOND)
    p_sweep.add_argument("--rate-up", type=float, default=None)
    p_sweep.add_argument("--rate-down", type=float, default=None)
    p_sweep.add_argument("--cover-size", type=int, default=1400)
    p_sweep.add_argument("--parallel", type=int, default=1, help="worker processes")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_fp = sub.add_parser("fingerprint", help="identify a device from its contacted domains")
    p_fp.add_argument("--domains", required=True, help="text file, one domain per line")
    p_fp.add_argument("--db", default=None, help="fingerprint database JSON (default: bundled)")
    _add_common(p_fp)
    p_fp.set_defaults(func=_cmd_fingerprint)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "attack" and args.schedule and args.period is None:
        print("error: --T is required when --schedule is supplied", file=sys.stderr)
        return 2
    args._argv = argv
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def replay_from_manifest(manifest_path: Path | str, out_dir: Path | str) -> int:
    """Re-run the command recorded in a manifest, writing into ``out_dir``."""
    manifest = json.loads(Path(manifest_path).read_text())
    argv = list(manifest["argv"]) + ["--out-dir", str(out_dir)]
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
