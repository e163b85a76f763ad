"""Core data types: fused samples, traces, and practice sessions.

All types are immutable after construction and safe to share between
concurrent pipeline stages. Invariants are checked at construction time so
that everything downstream can assume well-formed data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

VIOLIN_LABELS = ("v0", "v1", "v2", "v3", "v4")
BOW_LABELS = ("b0", "b1", "b2", "b3", "b4")
MARKER_LABELS = VIOLIN_LABELS + BOW_LABELS

GROUP_EXPLANATION = "explanation-only"
GROUP_EXPLANATION_SYSTEM = "explanation-plus-system"
SESSION_GROUPS = (GROUP_EXPLANATION, GROUP_EXPLANATION_SYSTEM)

Point3 = tuple[float, float, float]


def _as_point(value: Sequence[float]) -> Point3:
    x, y, z = value
    return (float(x), float(y), float(z))


@dataclass(frozen=True)
class Sample:
    """One time-stamped fused observation.

    ``t`` is in seconds relative to the trace start, ``pressure`` is the
    tared force in newtons. ``markers`` maps marker labels (``v0``..``v4``,
    ``b0``..``b4``) to 3D points in meters; occluded markers are simply
    absent, never zero-filled. ``position`` is the normalized bow contact
    coordinate (frog = 0, tip = 1). When ``valid_position`` is false both
    ``position`` and ``speed`` must be absent.
    """

    t: float
    pressure: float
    markers: Mapping[str, Point3] = field(default_factory=dict)
    position: float | None = None
    speed: float | None = None
    valid_position: bool = False

    def __post_init__(self) -> None:
        if not math.isfinite(self.t) or self.t < 0.0:
            raise ValueError(f"sample time must be finite and non-negative, got {self.t}")
        if not math.isfinite(self.pressure):
            raise ValueError(f"sample pressure must be finite, got {self.pressure}")
        markers = {str(k): _as_point(v) for k, v in self.markers.items()}
        unknown = set(markers) - set(MARKER_LABELS)
        if unknown:
            raise ValueError(f"unknown marker labels: {sorted(unknown)}")
        object.__setattr__(self, "markers", markers)
        if self.valid_position:
            if self.position is None:
                raise ValueError("valid_position=True requires a position")
            if not (0.0 <= self.position <= 1.0):
                raise ValueError(f"position must lie in [0, 1], got {self.position}")
        else:
            if self.position is not None or self.speed is not None:
                raise ValueError("valid_position=False requires position and speed to be absent")


@dataclass(frozen=True)
class TraceMeta:
    """Identifying metadata for one measurement."""

    participant: str = ""
    session: str = ""
    trial: int = 0
    tempo_bpm: float = 75.0
    started_at: str | None = None  # wall-clock ISO timestamp, recorded once


@dataclass(frozen=True)
class Trace:
    """An ordered sequence of samples from one measurement.

    ``tare_offset`` records the at-rest sensor reading (newtons) that was
    subtracted from every pressure value; sample pressures are always tared.
    """

    samples: tuple[Sample, ...]
    tare_offset: float = 0.0
    calibration_factor: float = 1.0
    nominal_rate: float = 60.0
    meta: TraceMeta = field(default_factory=TraceMeta)

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        if not (self.nominal_rate > 0.0):
            raise ValueError(f"nominal_rate must be positive, got {self.nominal_rate}")
        if not (self.calibration_factor > 0.0):
            raise ValueError(f"calibration_factor must be positive, got {self.calibration_factor}")
        prev = -math.inf
        for i, s in enumerate(self.samples):
            if s.t <= prev:
                raise ValueError(f"non-monotonic timestamp at sample {i}")
            prev = s.t

    def __len__(self) -> int:
        return len(self.samples)

    # Array views used throughout the analysis modules.

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=float)

    def pressures(self) -> np.ndarray:
        return np.array([s.pressure for s in self.samples], dtype=float)

    def positions(self) -> np.ndarray:
        """Positions as floats with NaN where the position is absent."""
        return np.array(
            [s.position if s.valid_position else np.nan for s in self.samples], dtype=float
        )

    def speeds(self) -> np.ndarray:
        return np.array(
            [s.speed if s.speed is not None else np.nan for s in self.samples], dtype=float
        )

    def with_speeds(self, speeds: Iterable[float]) -> "Trace":
        """Return a copy whose samples carry the given per-sample speeds.

        NaN entries mean "absent". Speeds on samples without a valid
        position are discarded (the sample invariant forbids them).
        """
        values = list(speeds)
        if len(values) != len(self.samples):
            raise ValueError("speeds length must match sample count")
        out = []
        for s, v in zip(self.samples, values):
            if s.valid_position and v is not None and math.isfinite(v):
                out.append(replace(s, speed=float(v)))
            else:
                out.append(replace(s, speed=None))
        return replace(self, samples=tuple(out))


@dataclass(frozen=True)
class Session:
    """A labeled group of traces (e.g. S0..S3) from one participant sitting."""

    label: str
    traces: tuple[Trace, ...]
    group: str = GROUP_EXPLANATION

    def __post_init__(self) -> None:
        object.__setattr__(self, "traces", tuple(self.traces))
        if not self.label:
            raise ValueError("session label must be non-empty")
        if self.group not in SESSION_GROUPS:
            raise ValueError(f"group must be one of {SESSION_GROUPS}, got {self.group!r}")
        for tr in self.traces:
            if tr.meta.session != self.label:
                raise ValueError(
                    f"trace session label {tr.meta.session!r} does not match {self.label!r}"
                )
