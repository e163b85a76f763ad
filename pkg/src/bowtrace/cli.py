"""Command line interface.

Subcommands: ``synth``, ``analyze``, ``compare``, ``cohort``, ``record``,
``replay``, ``serve``. Thresholds, region margin, and detection parameters
are shared flags. The default service port comes from ``BOWTRACE_PORT``.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import ingest, kinematics, recording, service, synth
from .analytics import (
    RegionConfig,
    Thresholds,
    achievement_rate,
    cohort_report,
    compare_sessions,
    improvement_rate,
    trip_metrics,
)
from .geometry import make_position_solver
from .model import Trace


def _add_threshold_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--floor", type=float, default=0.5, help="pressure floor in newtons")
    parser.add_argument("--ceiling", type=float, default=0.17, help="trip diff ceiling in newtons")
    parser.add_argument("--margin", type=float, default=0.05, help="region exclusion margin")


def _add_detection_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--prominence", type=float, default=kinematics.DEFAULT_PROMINENCE)
    parser.add_argument("--smooth", type=int, default=kinematics.DEFAULT_SMOOTHING_WINDOW)
    parser.add_argument("--curv-window", type=int, default=kinematics.DEFAULT_CURVATURE_HALF_WINDOW)
    parser.add_argument("--min-separation", type=float, default=kinematics.DEFAULT_MIN_SEPARATION)


def _thresholds(args: argparse.Namespace) -> Thresholds:
    return Thresholds(pressure_floor=args.floor, diff_ceiling=args.ceiling)


def _region(args: argparse.Namespace) -> RegionConfig:
    return RegionConfig(exclusion=args.margin)


def _load_subject_dirs(root: Path) -> list[list[Trace]]:
    """Group recordings under ``root`` by participant header."""
    by_subject: dict[str, list[Trace]] = defaultdict(list)
    for trace in recording.iter_recordings([root]):
        by_subject[trace.meta.participant].append(trace)
    return [by_subject[k] for k in sorted(by_subject)]


def cmd_synth(args: argparse.Namespace) -> int:
    profile = synth.BUILTIN_PROFILES.get(args.profile)
    if profile is None:
        profile = synth.load_profile(args.profile)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    import dataclasses

    for trial in range(args.trials):
        trial_profile = dataclasses.replace(profile, seed=args.seed + trial)
        trace = synth.generate_trace(
            trial_profile,
            tempo=args.tempo,
            counts_per_stroke=args.counts,
            duration=args.duration,
            rate=args.rate,
            participant=args.participant,
            session=args.session,
            trial=trial,
        )
        path = out / f"{args.participant}_{args.session or 'synth'}_t{trial}{recording.EXTENSION}"
        n = recording.write_recording(trace, path)
        print(f"wrote {path} ({n} bytes, {len(trace)} samples)")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    thresholds = _thresholds(args)
    region = _region(args)
    for trace in recording.iter_recordings(args.files):
        turns = kinematics.detect_turns(trace, args.prominence, args.min_separation)
        seg = kinematics.segment(trace, turns)
        trips = [trip_metrics(rt, trace, region, thresholds) for rt in seg.round_trips]
        rate = achievement_rate(trace, thresholds.pressure_floor)
        improvement = improvement_rate(trips, thresholds)
        name = f"{trace.meta.participant} {trace.meta.session} trial {trace.meta.trial}".strip()
        print(f"{name}: {len(trace)} samples, {len(seg.strokes)} strokes, {len(trips)} round trips")
        print(f"  achievement rate at {thresholds.pressure_floor} N: {rate:.3f}")
        if improvement is None:
            print("  improvement rate: n/a (no trip exceeded the ceiling)")
        else:
            print(f"  improvement rate: {improvement:.3f}")
        for tm in trips:
            if not tm.valid:
                print(f"  trip {tm.trip_index}: invalid (occluded region)")
                continue
            means = ", ".join(f"{s.region} {s.mean:.3f}" for s in tm.summaries)
            flag = "over" if tm.exceeds else "ok"
            print(f"  trip {tm.trip_index}: diff {tm.diff:.3f} N ({flag}); means {means}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    labels = args.sessions.split(",")
    traces = list(recording.iter_recordings(args.files))
    values: dict[str, dict[str, list[float]]] = {label: defaultdict(list) for label in labels}
    for trace in traces:
        label = trace.meta.session
        if label not in values:
            continue
        if args.metric == "achievement":
            value = achievement_rate(trace, args.floor)
        else:
            value = float(np.mean(trace.pressures()))
        values[label][trace.meta.participant].append(value)
    participants = sorted(
        set.intersection(*(set(values[label]) for label in labels)) if labels else set()
    )
    if not participants:
        print("no participants present in every session", file=sys.stderr)
        return 1
    vectors = {
        label: [float(np.mean(values[label][p])) for p in participants] for label in labels
    }
    print(f"metric: {args.metric}; paired participants: {', '.join(participants)}")
    for entry in compare_sessions(vectors):
        flag = "*" if entry.significant else " "
        if entry.note:
            print(f" {flag}{entry.label}: {entry.note}")
        else:
            print(
                f" {flag}{entry.label}: p={entry.p_value:.4f} adj={entry.p_adjusted:.4f}"
                + (f" higher={entry.higher}" if entry.higher else "")
            )
    return 0


def cmd_cohort(args: argparse.Namespace) -> int:
    experts = _load_subject_dirs(Path(args.experts))
    beginners = _load_subject_dirs(Path(args.beginners))
    report = cohort_report(
        experts,
        beginners,
        config=_region(args),
        smoothing_window=args.smooth,
        prominence=args.prominence,
        min_separation=args.min_separation,
        half_window=args.curv_window,
    )
    print(report.to_text(), end="")
    return 0


def cmd_record(args: argparse.Namespace) -> int:
    pressure_lines = Path(args.pressure_from).read_text(encoding="utf-8").splitlines()
    marker_lines = Path(args.markers_from).read_text(encoding="utf-8").splitlines()
    tare_frames = [
        ingest.decode_pressure(raw, args.calibration)
        for _, raw in (ingest.parse_pressure_line(line) for line in pressure_lines[: args.tare_frames])
    ]
    tare = ingest.capture_tare(tare_frames)
    if tare.unstable:
        print("warning: unstable tare capture", file=sys.stderr)
    solver = None
    if args.axis_config:
        from .geometry import load_axis_config

        solver = make_position_solver(load_axis_config(args.axis_config))
    samples = ingest.fuse(
        ingest.pressure_frames(pressure_lines[args.tare_frames :], nominal_rate=args.rate),
        ingest.marker_frames(marker_lines),
        rate=args.rate,
        calibration_factor=args.calibration,
        tare_offset=tare.offset,
        position_solver=solver,
        on_fault=lambda msg: print(f"fault: {msg}", file=sys.stderr),
    )
    from .model import TraceMeta

    trace = Trace(
        samples=tuple(samples),
        tare_offset=tare.offset,
        calibration_factor=args.calibration,
        nominal_rate=args.rate,
        meta=TraceMeta(participant=args.participant, session=args.session),
    )
    n = recording.write_recording(trace, args.out)
    print(f"wrote {args.out} ({n} bytes, {len(trace)} samples)")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    sink = lambda event: print(service.event_line(event))  # noqa: E731
    summary = service.replay_session(
        args.file,
        speed=args.speed,
        sinks=[sink],
        thresholds=_thresholds(args),
        region=_region(args),
    )
    print(
        f"# {summary.n_samples} samples, {len(summary.trips)} trips, "
        f"achievement {summary.achievement_rate}",
        file=sys.stderr,
    )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    svc = service.FeedbackService(thresholds=_thresholds(args), region=_region(args))
    server, svc = service.serve(port=args.port, host=args.host, service=svc)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port} (GET /events, POST /command)")
    if args.source:
        result = svc.handle_command(
            {"cmd": "start-session", "source": args.source, "speed": args.speed}
        )
        print(json.dumps(result))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bowtrace", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic recordings")
    p.add_argument("--profile", default="expert", help="expert | beginner | profile file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--tempo", type=float, default=75.0)
    p.add_argument("--counts", type=int, default=4)
    p.add_argument("--duration", type=float, default=25.0)
    p.add_argument("--rate", type=float, default=60.0)
    p.add_argument("--participant", default="synthetic")
    p.add_argument("--session", default="")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="per-recording metrics")
    p.add_argument("files", nargs="+")
    _add_threshold_args(p)
    _add_detection_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="paired session comparison")
    p.add_argument("files", nargs="+", help="recordings or directories")
    p.add_argument("--sessions", required=True, help="comma-separated labels, e.g. S0,S2,S3")
    p.add_argument("--metric", choices=["achievement", "mean-pressure"], default="mean-pressure")
    _add_threshold_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("cohort", help="expert-vs-beginner analysis battery")
    p.add_argument("--experts", required=True)
    p.add_argument("--beginners", required=True)
    _add_threshold_args(p)
    _add_detection_args(p)
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("record", help="fuse wire-format streams into a recording")
    p.add_argument("--pressure-from", required=True, help="file of seq,raw lines")
    p.add_argument("--markers-from", required=True, help="file of t,label,x,y,z lines")
    p.add_argument("--out", required=True)
    p.add_argument("--calibration", type=float, required=True, help="newtons per count")
    p.add_argument("--tare-frames", type=int, default=ingest.DEFAULT_TARE_FRAMES)
    p.add_argument("--rate", type=float, default=60.0)
    p.add_argument("--axis-config", default=None)
    p.add_argument("--participant", default="")
    p.add_argument("--session", default="")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("replay", help="replay a recording as NDJSON events")
    p.add_argument("file")
    p.add_argument("--speed", type=float, default=None, help="1.0 = real time; default batch")
    _add_threshold_args(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="run the feedback service")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--source", default=None, help="start immediately: synth:expert or a file")
    p.add_argument("--speed", type=float, default=1.0)
    _add_threshold_args(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
