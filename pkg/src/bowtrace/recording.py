"""Line-oriented text recording format (`.bowtrace`) and session manifests.

One file per trial. Header lines are ``#key=value``; each following line is
one sample in fixed column order::

    t,pressure_N,v0x,v0y,v0z,...,v4z,b0x,...,b4z,position,speed,valid

Absent values (occluded markers, invalid positions) are empty cells, never
sentinel zeros. Floats are written with ``repr`` so a write/read round trip
is bit-exact. A session is a directory holding trial files plus a
``manifest.txt`` naming the files and the participant group.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import IO, Iterable

from .model import MARKER_LABELS, Sample, Session, Trace, TraceMeta

FORMAT_VERSION = 1
EXTENSION = ".bowtrace"
MANIFEST_NAME = "manifest.txt"

_N_COLUMNS = 2 + 3 * len(MARKER_LABELS) + 3


class RecordingError(ValueError):
    """Malformed recording content; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _sample_line(sample: Sample) -> str:
    cells = [_fmt(sample.t), _fmt(sample.pressure)]
    for label in MARKER_LABELS:
        point = sample.markers.get(label)
        if point is None:
            cells += ["", "", ""]
        else:
            cells += [_fmt(point[0]), _fmt(point[1]), _fmt(point[2])]
    cells.append(_fmt(sample.position))
    cells.append(_fmt(sample.speed))
    cells.append("1" if sample.valid_position else "0")
    return ",".join(cells)


def render_recording(trace: Trace) -> str:
    """Serialize a trace to the recording text."""
    meta = trace.meta
    lines = [
        f"#version={FORMAT_VERSION}",
        f"#participant={meta.participant}",
        f"#session={meta.session}",
        f"#trial={meta.trial}",
        f"#tempo_bpm={_fmt(meta.tempo_bpm)}",
        f"#rate_fps={_fmt(trace.nominal_rate)}",
        f"#tare_offset_N={_fmt(trace.tare_offset)}",
        f"#calibration_factor={_fmt(trace.calibration_factor)}",
    ]
    if meta.started_at is not None:
        lines.append(f"#started_at={meta.started_at}")
    lines.extend(_sample_line(s) for s in trace.samples)
    return "\n".join(lines) + "\n"


def write_recording(trace: Trace, destination: str | Path | IO[str]) -> int:
    """Write ``trace`` to a path or text sink; returns the UTF-8 byte count."""
    text = render_recording(trace)
    data = text.encode("utf-8")
    if hasattr(destination, "write"):
        destination.write(text)  # type: ignore[union-attr]
    else:
        try:
            Path(destination).write_bytes(data)
        except OSError as exc:
            raise RecordingError(f"recording sink failed after 0 bytes: {exc}") from exc
    return len(data)


def _parse_float(cell: str, what: str, line: int) -> float:
    try:
        return float(cell)
    except ValueError as exc:
        raise RecordingError(f"bad {what} value {cell!r}", line) from exc


def _parse_optional(cell: str, what: str, line: int) -> float | None:
    return None if cell == "" else _parse_float(cell, what, line)


def parse_recording(text: str) -> Trace:
    """Parse recording text into a Trace, enforcing every trace invariant."""
    headers: dict[str, str] = {}
    samples: list[Sample] = []
    sample_index = 0
    in_header = True
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip("\r")
        if not line:
            continue
        if line.startswith("#"):
            if not in_header:
                raise RecordingError("header line after sample data", line_no)
            key, sep, value = line[1:].partition("=")
            if not sep:
                raise RecordingError(f"malformed header line {line!r}", line_no)
            headers[key.strip()] = value.strip()
            continue
        if in_header:
            version = headers.get("version")
            if version is None:
                raise RecordingError("missing #version header", line_no)
            if version != str(FORMAT_VERSION):
                raise RecordingError(f"unsupported recording version {version!r}", line_no)
            in_header = False
        cells = line.split(",")
        if len(cells) != _N_COLUMNS:
            raise RecordingError(
                f"expected {_N_COLUMNS} columns, got {len(cells)}", line_no
            )
        t = _parse_float(cells[0], "timestamp", line_no)
        pressure = _parse_float(cells[1], "pressure", line_no)
        markers = {}
        for m, label in enumerate(MARKER_LABELS):
            triple = cells[2 + 3 * m : 5 + 3 * m]
            present = [c != "" for c in triple]
            if any(present) and not all(present):
                raise RecordingError(f"partial coordinates for marker {label}", line_no)
            if all(present):
                markers[label] = (
                    _parse_float(triple[0], f"{label} x", line_no),
                    _parse_float(triple[1], f"{label} y", line_no),
                    _parse_float(triple[2], f"{label} z", line_no),
                )
        position = _parse_optional(cells[-3], "position", line_no)
        speed = _parse_optional(cells[-2], "speed", line_no)
        if cells[-1] not in ("0", "1"):
            raise RecordingError(f"bad validity flag {cells[-1]!r}", line_no)
        valid = cells[-1] == "1"
        if samples and t <= samples[-1].t:
            raise RecordingError(f"non-monotonic timestamp at sample {sample_index}", line_no)
        try:
            samples.append(
                Sample(
                    t=t,
                    pressure=pressure,
                    markers=markers,
                    position=position,
                    speed=speed,
                    valid_position=valid,
                )
            )
        except ValueError as exc:
            raise RecordingError(str(exc), line_no) from exc
        sample_index += 1

    if in_header:
        # Header-only file (empty trace) still needs a version.
        version = headers.get("version")
        if version is None:
            raise RecordingError("missing #version header")
        if version != str(FORMAT_VERSION):
            raise RecordingError(f"unsupported recording version {version!r}")

    def need(key: str) -> str:
        if key not in headers:
            raise RecordingError(f"missing #{key} header")
        return headers[key]

    meta = TraceMeta(
        participant=headers.get("participant", ""),
        session=headers.get("session", ""),
        trial=int(need("trial")),
        tempo_bpm=float(need("tempo_bpm")),
        started_at=headers.get("started_at"),
    )
    try:
        return Trace(
            samples=tuple(samples),
            tare_offset=float(need("tare_offset_N")),
            calibration_factor=float(need("calibration_factor")),
            nominal_rate=float(need("rate_fps")),
            meta=meta,
        )
    except ValueError as exc:
        raise RecordingError(str(exc)) from exc


def read_recording(source: str | Path | IO[str]) -> Trace:
    """Read a recording from a path or text stream."""
    if hasattr(source, "read"):
        text = source.read()  # type: ignore[union-attr]
    else:
        text = Path(source).read_text(encoding="utf-8")
    return parse_recording(text)


def write_session(session: Session, directory: str | Path) -> list[Path]:
    """Write one file per trial plus a manifest into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    names = []
    for trace in session.traces:
        name = f"{trace.meta.participant or 'anon'}_{session.label}_t{trace.meta.trial}{EXTENSION}"
        write_recording(trace, directory / name)
        paths.append(directory / name)
        names.append(name)
    manifest = [f"#session={session.label}", f"#group={session.group}"] + names
    (directory / MANIFEST_NAME).write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return paths


def read_session(directory: str | Path) -> Session:
    """Load a session directory written by :func:`write_session`."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise RecordingError(f"no {MANIFEST_NAME} in {directory}")
    label = ""
    group = ""
    traces = []
    for line_no, line in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#session="):
            label = line.split("=", 1)[1]
        elif line.startswith("#group="):
            group = line.split("=", 1)[1]
        elif line.startswith("#"):
            raise RecordingError(f"unknown manifest header {line!r}", line_no)
        else:
            traces.append(read_recording(directory / line))
    return Session(label=label, traces=tuple(traces), group=group)


def iter_recordings(paths: Iterable[str | Path]) -> Iterable[Trace]:
    """Yield traces from files and directories (recursing into directories)."""
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for child in sorted(p.rglob(f"*{EXTENSION}")):
                yield read_recording(child)
        else:
            yield read_recording(p)


def open_text(path: str | Path) -> IO[str]:
    """Open a recording file for streamed reading."""
    return io.TextIOWrapper(open(path, "rb"), encoding="utf-8")
