"""Live practice loop: per-sample feedback events, round-trip metrics, and
the network service that drives the three-panel UI.

Events are JSON-compatible dicts serialized one per line. The transcript of
a session is deterministic: replaying the same recording yields the same
bytes, which is how the golden-transcript tests pin the whole pipeline.

Wire protocol (newline-delimited JSON over HTTP, browser-reachable):

* ``GET /events``  -- streaming NDJSON: a ``hello`` line, a ``snapshot`` of
  the current state (late joiners start here), then live events;
* ``GET /snapshot`` -- current state as one JSON object;
* ``POST /command`` -- ``{"cmd": "start-session" | "stop-session" |
  "set-thresholds", ...}``; replies ``{"ok": true}`` or an error object.

Event kinds: ``pressure-tick`` (every sample), ``trip-complete`` (per round
trip, with the three region box summaries in tip/middle/frog display
order), ``fault``, ``session-mark``, and ``session-end``.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, field, replace as dc_replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from queue import Empty, SimpleQueue
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import kinematics, synth
from .analytics import RegionConfig, Thresholds, TripMetrics, achievement_rate
from .analytics import improvement_rate as batch_improvement_rate
from .analytics import trip_metrics_arrays
from .ingest import replay_source
from .model import Sample, Trace, TraceMeta
from .recording import read_recording

PROTOCOL_VERSION = 1
DEFAULT_PORT = 8787
PORT_ENV_VAR = "BOWTRACE_PORT"

Event = dict[str, Any]
Sink = Callable[[Event], None]


@dataclass
class DetectionParams:
    """Turn detection / segmentation parameters, shared by batch and live."""

    prominence: float = kinematics.DEFAULT_PROMINENCE
    min_separation: float = kinematics.DEFAULT_MIN_SEPARATION
    max_gap: float = kinematics.DEFAULT_MAX_GAP
    end_tolerance: float = kinematics.DEFAULT_PROMINENCE


@dataclass(frozen=True)
class SessionSummary:
    achievement_rate: float | None
    improvement_rate: float | None
    trips: tuple[TripMetrics, ...]
    n_samples: int
    faults: tuple[str, ...]
    trace: Trace


def event_line(event: Event) -> str:
    return json.dumps(event, separators=(",", ":"), allow_nan=False)


def transcript(events: Iterable[Event]) -> str:
    return "".join(event_line(e) + "\n" for e in events)


def _round_trip_event(metrics: TripMetrics, t_end: float) -> Event:
    regions = []
    for summary in reversed(metrics.summaries):  # tip, middle, frog display order
        regions.append(
            {
                "name": summary.region,
                "n": summary.n,
                "min": summary.min,
                "q1": summary.q1,
                "median": summary.median,
                "q3": summary.q3,
                "max": summary.max,
                "mean": summary.mean,
            }
        )
    return {
        "kind": "trip-complete",
        "index": metrics.trip_index,
        "t": t_end,
        "regions": regions,
        "diff": metrics.diff,
        "ok": (not metrics.exceeds) if metrics.valid else None,
        "valid": metrics.valid,
    }


class SessionEngine:
    """Incremental per-sample processing with batch-equal results.

    Turn detection reruns over the full recorded prefix on every tick (cheap
    at protocol scale) and a round trip is emitted as soon as its closing
    reversal is a confirmed detected turn, so streamed trip metrics are
    bit-equal to batch analytics over the same recording. The end-of-stream
    completion rule (a trailing stroke that returned to the reversal level)
    is applied once in :meth:`finish`.
    """

    def __init__(
        self,
        thresholds: Thresholds = Thresholds(),
        region: RegionConfig = RegionConfig(),
        detection: DetectionParams | None = None,
        rate: float = 60.0,
        label: str = "",
        meta: TraceMeta | None = None,
        tare_offset: float = 0.0,
        calibration_factor: float = 1.0,
    ):
        self.thresholds = thresholds
        self.region = region
        self.detection = detection or DetectionParams()
        self.rate = rate
        self.label = label
        self.meta = meta or TraceMeta(session=label)
        self.tare_offset = tare_offset
        self.calibration_factor = calibration_factor
        self._samples: list[Sample] = []
        self._t: list[float] = []
        self._p: list[float] = []
        self._x: list[float] = []
        self.trips: list[TripMetrics] = []
        self.faults: list[str] = []
        self.current_pressure: float | None = None
        self.finished = False

    # -- state ----------------------------------------------------------

    @property
    def pressure_ok(self) -> bool | None:
        if self.current_pressure is None:
            return None
        return self.current_pressure >= self.thresholds.pressure_floor

    @property
    def last_valid_trip(self) -> TripMetrics | None:
        for trip in reversed(self.trips):
            if trip.valid:
                return trip
        return None

    def snapshot(self) -> Event:
        last = self.last_valid_trip
        return {
            "kind": "snapshot",
            "protocol": PROTOCOL_VERSION,
            "label": self.label,
            "thresholds": {
                "floor": self.thresholds.pressure_floor,
                "ceiling": self.thresholds.diff_ceiling,
            },
            "pressure": self.current_pressure,
            "pressure_ok": self.pressure_ok,
            "no_data": last is None,
            "last_trip": None if last is None else _round_trip_event(last, 0.0),
            "n_trips": len(self.trips),
        }

    # -- processing -----------------------------------------------------

    def _arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.asarray(self._t, dtype=float),
            np.asarray(self._p, dtype=float),
            np.asarray(self._x, dtype=float),
        )

    def _new_trips(self, allow_end_completion: bool) -> list[Event]:
        t, p, x = self._arrays()
        turns = kinematics.detect_turns_arrays(
            t,
            x,
            self.rate,
            self.detection.prominence,
            self.detection.min_separation,
            self.detection.max_gap,
        )
        seg = kinematics.segment_arrays(
            t,
            x,
            turns,
            allow_end_completion=allow_end_completion,
            end_tolerance=self.detection.end_tolerance,
            max_gap=self.detection.max_gap,
        )
        events = []
        for trip in seg.round_trips[len(self.trips) :]:
            metrics = trip_metrics_arrays(p, x, trip, self.region, self.thresholds)
            self.trips.append(metrics)
            events.append(_round_trip_event(metrics, float(t[trip.end_idx - 1])))
        return events

    def step(self, sample: Sample) -> list[Event]:
        """Process one fused sample; returns the events it produced."""
        if self.finished:
            raise RuntimeError("engine already finished")
        self._samples.append(sample)
        self._t.append(sample.t)
        self._p.append(sample.pressure)
        self._x.append(sample.position if sample.valid_position else math.nan)
        self.current_pressure = sample.pressure
        events: list[Event] = [
            {
                "kind": "pressure-tick",
                "t": sample.t,
                "pressure": sample.pressure,
                "ok": sample.pressure >= self.thresholds.pressure_floor,
            }
        ]
        events.extend(self._new_trips(allow_end_completion=False))
        return events

    def fault(self, source: str, reason: str) -> Event:
        self.faults.append(f"{source}: {reason}")
        return {"kind": "fault", "source": source, "reason": reason}

    def set_thresholds(self, floor: float | None = None, ceiling: float | None = None) -> Event:
        self.thresholds = Thresholds(
            pressure_floor=floor if floor is not None else self.thresholds.pressure_floor,
            diff_ceiling=ceiling if ceiling is not None else self.thresholds.diff_ceiling,
        )
        return {
            "kind": "session-mark",
            "event": "thresholds-changed",
            "floor": self.thresholds.pressure_floor,
            "ceiling": self.thresholds.diff_ceiling,
        }

    def finish(self) -> tuple[SessionSummary, list[Event]]:
        """Close the session: final round trip, summary, recorded trace."""
        if self.finished:
            raise RuntimeError("engine already finished")
        self.finished = True
        events = self._new_trips(allow_end_completion=True) if self._samples else []
        trace = Trace(
            samples=tuple(self._samples),
            tare_offset=self.tare_offset,
            calibration_factor=self.calibration_factor,
            nominal_rate=self.rate,
            meta=self.meta,
        )
        rate = achievement_rate(trace, self.thresholds.pressure_floor) if len(trace) else None
        improvement = batch_improvement_rate(self.trips, self.thresholds)
        summary = SessionSummary(
            achievement_rate=rate,
            improvement_rate=improvement,
            trips=tuple(self.trips),
            n_samples=len(self._samples),
            faults=tuple(self.faults),
            trace=trace,
        )
        events.append(
            {
                "kind": "session-end",
                "n_samples": summary.n_samples,
                "n_trips": len(self.trips),
                "achievement_rate": summary.achievement_rate,
                "improvement_rate": summary.improvement_rate,
            }
        )
        return summary, events


def run_session(
    source: Iterable[Sample],
    thresholds: Thresholds = Thresholds(),
    region: RegionConfig = RegionConfig(),
    detection: DetectionParams | None = None,
    sinks: Sequence[Sink] = (),
    rate: float = 60.0,
    label: str = "",
    meta: TraceMeta | None = None,
    speed: float | None = None,
    engine: SessionEngine | None = None,
) -> SessionSummary:
    """Drive a full session from a sample source.

    ``speed`` paces emission in wall time (1.0 = real time); None runs as a
    batch. The event sequence is identical either way.
    """
    engine = engine or SessionEngine(
        thresholds=thresholds, region=region, detection=detection, rate=rate, label=label, meta=meta
    )

    def emit(event: Event) -> None:
        for sink in sinks:
            sink(event)

    emit({"kind": "session-mark", "event": "session-start", "label": engine.label})
    tick_seconds = (1.0 / engine.rate) / speed if speed else 0.0
    for sample in source:
        if tick_seconds:
            time.sleep(tick_seconds)
        for event in engine.step(sample):
            emit(event)
    summary, final_events = engine.finish()
    for event in final_events:
        emit(event)
    return summary


def replay_session(
    recording: str | Path | Trace,
    speed: float | None = None,
    sinks: Sequence[Sink] = (),
    thresholds: Thresholds = Thresholds(),
    region: RegionConfig = RegionConfig(),
    detection: DetectionParams | None = None,
) -> SessionSummary:
    """Replay a recording through the live pipeline.

    Produces the identical event sequence to live processing of the same
    samples; ``speed`` only scales wall-clock pacing.
    """
    trace = recording if isinstance(recording, Trace) else read_recording(recording)
    return run_session(
        replay_source(trace),
        thresholds=thresholds,
        region=region,
        detection=detection,
        sinks=sinks,
        rate=trace.nominal_rate,
        label=trace.meta.session,
        meta=trace.meta,
        speed=speed,
    )


# ---------------------------------------------------------------------------
# Network service
# ---------------------------------------------------------------------------


@dataclass
class _Subscriber:
    queue: SimpleQueue = field(default_factory=SimpleQueue)
    closed: bool = False


class FeedbackService:
    """Session state plus fan-out to any number of read-only clients."""

    def __init__(
        self,
        thresholds: Thresholds = Thresholds(),
        region: RegionConfig = RegionConfig(),
        detection: DetectionParams | None = None,
        rate: float = 60.0,
    ):
        self.thresholds = thresholds
        self.region = region
        self.detection = detection or DetectionParams()
        self.rate = rate
        self._lock = threading.Lock()
        self._subscribers: list[_Subscriber] = []
        self._engine: SessionEngine | None = None
        self._session_thread: threading.Thread | None = None
        self._stop_requested = threading.Event()
        self.last_summary: SessionSummary | None = None

    # -- event fan-out ----------------------------------------------------

    def subscribe(self) -> tuple[_Subscriber, list[Event]]:
        with self._lock:
            sub = _Subscriber()
            self._subscribers.append(sub)
            hello = {"kind": "hello", "protocol": PROTOCOL_VERSION, "service": "bowtrace"}
            snapshot = (
                self._engine.snapshot() if self._engine is not None else self._idle_snapshot()
            )
            return sub, [hello, snapshot]

    def unsubscribe(self, sub: _Subscriber) -> None:
        with self._lock:
            sub.closed = True
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def _publish(self, event: Event) -> None:
        for sub in list(self._subscribers):
            if not sub.closed:
                sub.queue.put(event)

    def _idle_snapshot(self) -> Event:
        return {
            "kind": "snapshot",
            "protocol": PROTOCOL_VERSION,
            "label": "",
            "thresholds": {
                "floor": self.thresholds.pressure_floor,
                "ceiling": self.thresholds.diff_ceiling,
            },
            "pressure": None,
            "pressure_ok": None,
            "no_data": True,
            "last_trip": None,
            "n_trips": 0,
        }

    # -- commands ----------------------------------------------------------

    def handle_command(self, command: dict) -> dict:
        cmd = command.get("cmd")
        try:
            if cmd == "start-session":
                return self._cmd_start(command)
            if cmd == "stop-session":
                return self._cmd_stop()
            if cmd == "set-thresholds":
                return self._cmd_thresholds(command)
        except (ValueError, OSError) as exc:
            return {"ok": False, "error": str(exc)}
        return {"ok": False, "error": f"unknown command {cmd!r}"}

    def _resolve_source(self, spec: str, seed: int, duration: float) -> tuple[Iterable[Sample], float, str]:
        if spec.startswith("synth:"):
            name = spec.split(":", 1)[1]
            if name in synth.BUILTIN_PROFILES:
                profile = synth.BUILTIN_PROFILES[name]
            else:
                profile = synth.load_profile(name)
            if seed:
                profile = dc_replace(profile, seed=seed)
            trace = synth.generate_trace(profile, duration=duration, rate=self.rate)
            return replay_source(trace), trace.nominal_rate, name
        path = spec.split(":", 1)[1] if spec.startswith("file:") else spec
        trace = read_recording(path)
        return replay_source(trace), trace.nominal_rate, trace.meta.session

    def _cmd_start(self, command: dict) -> dict:
        with self._lock:
            if self._engine is not None and not self._engine.finished:
                return {"ok": False, "error": "a session is already running"}
        spec = command.get("source", "synth:expert")
        seed = int(command.get("seed", 0))
        speed = command.get("speed")
        duration = float(command.get("duration", 25.0))
        label = str(command.get("label", ""))
        source, rate, _ = self._resolve_source(str(spec), seed, duration)
        engine = SessionEngine(
            thresholds=self.thresholds,
            region=self.region,
            detection=self.detection,
            rate=rate,
            label=label,
        )
        with self._lock:
            self._engine = engine
            self._stop_requested.clear()
        thread = threading.Thread(
            target=self._run, args=(engine, source, speed), daemon=True
        )
        self._session_thread = thread
        thread.start()
        return {"ok": True, "started": True}

    def _run(self, engine: SessionEngine, source: Iterable[Sample], speed: float | None) -> None:
        tick_seconds = (1.0 / engine.rate) / speed if speed else 0.0
        with self._lock:
            self._publish({"kind": "session-mark", "event": "session-start", "label": engine.label})
        for sample in source:
            if self._stop_requested.is_set():
                break
            if tick_seconds:
                time.sleep(tick_seconds)
            with self._lock:
                for event in engine.step(sample):
                    self._publish(event)
        with self._lock:
            if not engine.finished:
                summary, events = engine.finish()
                self.last_summary = summary
                for event in events:
                    self._publish(event)

    def _cmd_stop(self) -> dict:
        self._stop_requested.set()
        thread = self._session_thread
        if thread is not None:
            thread.join(timeout=5.0)
        with self._lock:
            running = self._engine is not None and not self._engine.finished
        if running:
            return {"ok": False, "error": "session did not stop in time"}
        return {"ok": True, "stopped": True}

    def _cmd_thresholds(self, command: dict) -> dict:
        floor = command.get("floor")
        ceiling = command.get("ceiling")
        with self._lock:
            self.thresholds = Thresholds(
                pressure_floor=float(floor) if floor is not None else self.thresholds.pressure_floor,
                diff_ceiling=float(ceiling) if ceiling is not None else self.thresholds.diff_ceiling,
            )
            if self._engine is not None and not self._engine.finished:
                event = self._engine.set_thresholds(
                    floor=float(floor) if floor is not None else None,
                    ceiling=float(ceiling) if ceiling is not None else None,
                )
            else:
                event = {
                    "kind": "session-mark",
                    "event": "thresholds-changed",
                    "floor": self.thresholds.pressure_floor,
                    "ceiling": self.thresholds.diff_ceiling,
                }
            self._publish(event)
        return {"ok": True}

    def wait_for_session(self, timeout: float = 60.0) -> None:
        thread = self._session_thread
        if thread is not None:
            thread.join(timeout=timeout)


class _Handler(BaseHTTPRequestHandler):
    service: FeedbackService  # set by serve()

    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib signature
        pass

    def _write_json(self, status: int, payload: dict) -> None:
        body = (event_line(payload) + "\n").encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:  # noqa: N802 - stdlib casing
        if self.path == "/snapshot":
            sub, head = self.service.subscribe()
            self.service.unsubscribe(sub)
            self._write_json(200, head[-1])
            return
        if self.path != "/events":
            self._write_json(404, {"ok": False, "error": f"no route {self.path}"})
            return
        sub, head = self.service.subscribe()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Connection", "close")
            self.end_headers()
            for event in head:
                self.wfile.write((event_line(event) + "\n").encode("utf-8"))
            self.wfile.flush()
            while True:
                try:
                    event = sub.queue.get(timeout=0.5)
                except Empty:
                    if self.server.__dict__.get("_shutting_down"):
                        break
                    continue
                self.wfile.write((event_line(event) + "\n").encode("utf-8"))
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            self.service.unsubscribe(sub)

    def do_POST(self) -> None:  # noqa: N802 - stdlib casing
        if self.path != "/command":
            self._write_json(404, {"ok": False, "error": f"no route {self.path}"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length)
        try:
            command = json.loads(body.decode("utf-8"))
            if not isinstance(command, dict):
                raise ValueError("command must be a JSON object")
        except (ValueError, UnicodeDecodeError) as exc:
            self._write_json(400, {"ok": False, "error": f"malformed command: {exc}"})
            return
        result = self.service.handle_command(command)
        self._write_json(200 if result.get("ok") else 400, result)


def default_port() -> int:
    env = os.environ.get(PORT_ENV_VAR)
    return int(env) if env else DEFAULT_PORT


def serve(
    port: int | None = None,
    host: str = "127.0.0.1",
    service: FeedbackService | None = None,
) -> tuple[ThreadingHTTPServer, FeedbackService]:
    """Bind the feedback service; returns the running server and service.

    The server runs on a daemon thread; call ``server.shutdown()`` to stop.
    Bind failures propagate as OSError.
    """
    service = service or FeedbackService()
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port if port is not None else default_port()), handler)
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, service
