"""Sensor stream ingestion: decoding, taring, and fixed-rate fusion.

Two receive-timestamped streams (load-cell pressure frames and
motion-capture marker frames) are aligned onto a fixed sample clock by
zero-order hold: each tick takes the latest frame of each kind that is not
newer than the tick. Interpolation is deliberately avoided -- during
occlusion it would fabricate data.

Wire formats (documented so hardware bridges can be written independently):

* pressure, serial-style byte stream: one ``seq,raw`` text line per frame;
* markers, datagram/stream socket: one ``t,label,x,y,z`` text line per
  visible marker, lines with equal ``t`` forming one frame.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Iterator, Mapping

from .geometry import ContactSolution, GeometryError, OcclusionError
from .model import MARKER_LABELS, Point3, Sample, Trace

SEQ_WRAP = 2**16  # pressure frame counters wrap at 16 bits
MARKER_STALE_TICKS = 2
PRESSURE_STALE_TICKS = 10
DEFAULT_TARE_FRAMES = 30
TARE_STABLE_BAND = 0.2  # newtons of spread (~3x sensor resolution) before a tare is suspect


class DecodeError(ValueError):
    """Unparseable or non-finite sensor data."""


class StreamFault(RuntimeError):
    """A live stream stopped delivering frames (e.g. sensor disconnected)."""


class TareError(ValueError):
    """Invalid taring request."""


@dataclass(frozen=True)
class PressureFrame:
    seq: int  # monotonically increasing modulo SEQ_WRAP
    raw: float  # sensor counts
    t_rx: float  # receive time, seconds


@dataclass(frozen=True)
class MarkerFrame:
    t_rx: float
    points: Mapping[str, Point3]

    def __post_init__(self) -> None:
        points = {str(k): tuple(float(v) for v in p) for k, p in self.points.items()}
        unknown = set(points) - set(MARKER_LABELS)
        if unknown:
            raise DecodeError(f"unknown marker labels: {sorted(unknown)}")
        object.__setattr__(self, "points", points)


@dataclass(frozen=True)
class TareState:
    offset: float  # newtons subtracted from every subsequent reading
    n_frames: int
    captured_at: float
    unstable: bool = False  # spread across the capture window exceeded the stable band

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ValueError("tare requires at least one frame")


def decode_pressure(raw: float, calibration_factor: float) -> float:
    """Convert raw sensor counts to untared newtons."""
    if calibration_factor <= 0.0:
        raise ValueError("calibration_factor must be positive")
    if not math.isfinite(raw):
        raise DecodeError(f"non-finite raw pressure value {raw!r}")
    return raw * calibration_factor


def capture_tare(
    frames: Iterable[float], captured_at: float = 0.0, stable_band: float = TARE_STABLE_BAND
) -> TareState:
    """Average the at-rest readings (bow off the string) into a tare offset."""
    values = [float(v) for v in frames]
    if not values:
        raise TareError("tare capture needs at least one frame")
    if not all(math.isfinite(v) for v in values):
        raise DecodeError("non-finite value in tare capture")
    spread = max(values) - min(values)
    return TareState(
        offset=sum(values) / len(values),
        n_frames=len(values),
        captured_at=captured_at,
        unstable=spread > stable_band,
    )


def apply_tare(trace: Trace, tare: TareState) -> Trace:
    """Subtract a tare offset from an untared trace.

    Taring is recorded in the trace metadata and is not idempotent: a trace
    that already carries a tare offset is rejected.
    """
    if trace.tare_offset != 0.0:
        raise TareError(f"trace already tared (offset {trace.tare_offset} N)")
    samples = tuple(replace(s, pressure=s.pressure - tare.offset) for s in trace.samples)
    return replace(trace, samples=samples, tare_offset=tare.offset)


def fuse(
    pressure_stream: Iterable[PressureFrame],
    marker_stream: Iterable[MarkerFrame],
    rate: float = 60.0,
    calibration_factor: float = 1.0,
    tare_offset: float = 0.0,
    position_solver: Callable[[Mapping[str, Point3]], ContactSolution] | None = None,
    marker_stale_ticks: int = MARKER_STALE_TICKS,
    pressure_stale_ticks: int = PRESSURE_STALE_TICKS,
    on_fault: Callable[[str], None] | None = None,
) -> Iterator[Sample]:
    """Align both streams onto the t = k/rate grid (zero-order hold).

    Emission starts at the first tick with pressure data and continues while
    either stream still has frames; the output grid has no gaps or
    duplicates. Markers staler than ``marker_stale_ticks`` ticks make the
    sample's position invalid. Pressure staler than ``pressure_stale_ticks``
    raises :class:`StreamFault` (or calls ``on_fault`` once per outage and
    holds the last value).

    Both streams must be ordered by receive time. This generator is the
    single-threaded reference implementation; live adapters feed it through
    queues.
    """
    if rate <= 0.0:
        raise ValueError("rate must be positive")
    pressure_iter = iter(pressure_stream)
    marker_iter = iter(marker_stream)
    p_next = next(pressure_iter, None)
    m_next = next(marker_iter, None)
    p_last: PressureFrame | None = None
    m_last: MarkerFrame | None = None
    p_last_tick = None
    m_last_tick = None
    fault_active = False

    k = 0
    while True:
        tick_t = k / rate
        while p_next is not None and p_next.t_rx <= tick_t:
            p_last, p_next = p_next, next(pressure_iter, None)
            p_last_tick = k
        while m_next is not None and m_next.t_rx <= tick_t:
            m_last, m_next = m_next, next(marker_iter, None)
            m_last_tick = k
        if p_next is None and m_next is None:
            # Streams exhausted: emit up to the last frame's tick, then stop.
            last_rx = max(
                p_last.t_rx if p_last else -math.inf, m_last.t_rx if m_last else -math.inf
            )
            if tick_t > last_rx:
                return

        if p_last is None:
            if p_next is None and m_next is None:
                return
            k += 1
            continue

        pressure_age = k - p_last_tick
        if pressure_age > pressure_stale_ticks:
            if not fault_active:
                fault_active = True
                message = (
                    f"pressure stream stale for {pressure_age} ticks at t={tick_t:.3f}"
                    " (sensor disconnected?)"
                )
                if on_fault is None:
                    raise StreamFault(message)
                on_fault(message)
        else:
            fault_active = False

        pressure = decode_pressure(p_last.raw, calibration_factor) - tare_offset
        markers: Mapping[str, Point3] = {}
        position = None
        valid = False
        marker_fresh = m_last is not None and (k - m_last_tick) <= marker_stale_ticks
        if marker_fresh:
            markers = m_last.points
            if position_solver is not None:
                try:
                    position = position_solver(markers).position
                    valid = True
                except (OcclusionError, GeometryError):
                    position = None
                    valid = False
        yield Sample(
            t=tick_t,
            pressure=pressure,
            markers=markers,
            position=position,
            valid_position=valid,
        )
        k += 1


def replay_source(trace: Trace) -> Iterator[Sample]:
    """A recording as a drop-in sample source (bit-exact replay)."""
    yield from trace.samples


# ---------------------------------------------------------------------------
# Wire format parsing
# ---------------------------------------------------------------------------


def parse_pressure_line(line: str) -> tuple[int, float]:
    """Parse one ``seq,raw`` pressure line."""
    parts = line.strip().split(",")
    if len(parts) != 2:
        raise DecodeError(f"bad pressure line {line!r}")
    try:
        return int(parts[0]), float(parts[1])
    except ValueError as exc:
        raise DecodeError(f"bad pressure line {line!r}") from exc


def pressure_frames(
    lines: Iterable[str],
    clock: Callable[[], float] | None = None,
    nominal_rate: float = 60.0,
) -> Iterator[PressureFrame]:
    """Decode a pressure wire stream into frames.

    ``clock`` stamps arrival times (e.g. ``time.monotonic`` for live
    serial); without one, receive times are synthesized from the unwrapped
    sequence counter at the nominal rate, which makes file replay
    deterministic.
    """
    wraps = 0
    prev_seq = None
    for line in lines:
        if not line.strip():
            continue
        seq, raw = parse_pressure_line(line)
        if prev_seq is not None:
            if seq < prev_seq % SEQ_WRAP:
                wraps += 1
            elif seq == prev_seq % SEQ_WRAP:
                raise DecodeError(f"pressure sequence counter stalled at {seq}")
        unwrapped = wraps * SEQ_WRAP + seq
        prev_seq = unwrapped
        t_rx = clock() if clock is not None else unwrapped / nominal_rate
        yield PressureFrame(seq=unwrapped, raw=raw, t_rx=t_rx)


def parse_marker_line(line: str) -> tuple[float, str, Point3]:
    """Parse one ``t,label,x,y,z`` marker line."""
    parts = line.strip().split(",")
    if len(parts) != 5:
        raise DecodeError(f"bad marker line {line!r}")
    try:
        t = float(parts[0])
        point = (float(parts[2]), float(parts[3]), float(parts[4]))
    except ValueError as exc:
        raise DecodeError(f"bad marker line {line!r}") from exc
    label = parts[1]
    if label not in MARKER_LABELS:
        raise DecodeError(f"unknown marker label {label!r}")
    return t, label, point


def marker_frames(lines: Iterable[str]) -> Iterator[MarkerFrame]:
    """Group marker lines sharing a timestamp into frames."""
    current_t: float | None = None
    points: dict[str, Point3] = {}
    for line in lines:
        if not line.strip():
            continue
        t, label, point = parse_marker_line(line)
        if current_t is not None and t != current_t:
            yield MarkerFrame(t_rx=current_t, points=points)
            points = {}
        if label in points:
            raise DecodeError(f"duplicate marker label {label!r} in frame at t={t}")
        current_t = t
        points[label] = point
    if current_t is not None:
        yield MarkerFrame(t_rx=current_t, points=points)


def monotonic_clock() -> float:
    """Default live arrival clock."""
    return time.monotonic()
