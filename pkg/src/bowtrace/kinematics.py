"""Bow kinematics: speed, direction-change detection, stroke segmentation.

Positions may be absent (occlusion); every function here works on arrays
where NaN means "no position". Short occlusion gaps (<= ``max_gap``
seconds) are bridged by linear interpolation for detection only; turns are
never detected across longer gaps and strokes touching them are flagged
low-confidence.

The ``*_arrays`` functions are the computational core, shared by the batch
API and the incremental feedback service.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks

DOWN = "down"  # frog -> tip, position increasing
UP = "up"
TIP = "tip"  # peak: direction change at the tip
FROG = "frog"  # valley: direction change at the frog

DEFAULT_SMOOTHING_WINDOW = 5  # frames
DEFAULT_PROMINENCE = 0.1  # normalized position
DEFAULT_MIN_SEPARATION = 1.0  # seconds between turns
DEFAULT_CURVATURE_HALF_WINDOW = 9  # frames (~150 ms at 60 fps)
DEFAULT_MAX_GAP = 0.5  # seconds of occlusion a detector may bridge


@dataclass(frozen=True)
class Stroke:
    direction: str  # DOWN | UP
    start_idx: int
    end_idx: int  # exclusive
    t_start: float
    t_end: float
    low_confidence: bool = False

    def __post_init__(self) -> None:
        if self.end_idx <= self.start_idx:
            raise ValueError("stroke end_idx must exceed start_idx")
        if self.direction not in (DOWN, UP):
            raise ValueError(f"bad stroke direction {self.direction!r}")


@dataclass(frozen=True)
class TurnPoint:
    idx: int
    kind: str  # TIP | FROG
    curvature: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in (TIP, FROG):
            raise ValueError(f"bad turn kind {self.kind!r}")
        if self.curvature is not None and self.curvature < 0.0:
            raise ValueError("curvature must be non-negative")


@dataclass(frozen=True)
class RoundTrip:
    down: Stroke
    up: Stroke
    index: int

    def __post_init__(self) -> None:
        if self.down.direction != DOWN or self.up.direction != UP:
            raise ValueError("round trip needs a down stroke followed by an up stroke")
        if self.up.start_idx != self.down.end_idx:
            raise ValueError("round trip strokes must be contiguous")

    @property
    def start_idx(self) -> int:
        return self.down.start_idx

    @property
    def end_idx(self) -> int:
        return self.up.end_idx


@dataclass(frozen=True)
class Segmentation:
    strokes: tuple[Stroke, ...]
    round_trips: tuple[RoundTrip, ...]


def _valid_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) spans of consecutive True entries."""
    runs = []
    start = None
    for i, ok in enumerate(mask):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def _long_gap_spans(t: np.ndarray, x: np.ndarray, max_gap: float) -> list[tuple[int, int]]:
    """Index spans of occlusion gaps longer than ``max_gap`` seconds."""
    invalid = ~np.isfinite(x)
    spans = []
    for start, end in _valid_runs(invalid):
        lo = t[start - 1] if start > 0 else t[start]
        hi = t[end] if end < len(t) else t[end - 1]
        if hi - lo > max_gap:
            spans.append((start, end))
    return spans


def _bridged(t: np.ndarray, x: np.ndarray, max_gap: float) -> np.ndarray:
    """Copy of ``x`` with short interior gaps linearly interpolated."""
    out = x.copy()
    invalid = ~np.isfinite(x)
    for start, end in _valid_runs(invalid):
        if start == 0 or end == len(x):
            continue  # leading/trailing gaps are never bridged
        if t[end] - t[start - 1] > max_gap:
            continue
        out[start:end] = np.interp(t[start:end], [t[start - 1], t[end]], [x[start - 1], x[end]])
    return out


def speed_arrays(t: np.ndarray, x: np.ndarray, smoothing_window: int = DEFAULT_SMOOTHING_WINDOW) -> np.ndarray:
    """Unsigned bow speed per sample; NaN where it cannot be computed.

    Each contiguous run of valid positions is smoothed with a symmetric
    moving average (window shrinks near the run edges, which keeps linear
    segments exact) and differentiated with central differences. Run
    endpoints, being adjacent to invalid samples or the trace boundary, get
    NaN.
    """
    if smoothing_window < 1 or smoothing_window % 2 == 0:
        raise ValueError("smoothing_window must be a positive odd integer")
    out = np.full(len(x), np.nan)
    half = smoothing_window // 2
    for start, end in _valid_runs(np.isfinite(x)):
        n = end - start
        if n < 3:
            continue
        seg = x[start:end]
        ts = t[start:end]
        smoothed = np.empty(n)
        for i in range(n):
            h = min(half, i, n - 1 - i)
            smoothed[i] = seg[i - h : i + h + 1].mean()
        deriv = (smoothed[2:] - smoothed[:-2]) / (ts[2:] - ts[:-2])
        out[start + 1 : end - 1] = np.abs(deriv)
    return out


def speed(trace, smoothing_window: int = DEFAULT_SMOOTHING_WINDOW) -> np.ndarray:
    """Per-sample unsigned speed (position units per second) for a trace."""
    x = trace.positions()
    if int(np.isfinite(x).sum()) < 3:
        raise ValueError("speed requires at least 3 valid positions")
    return speed_arrays(trace.times(), x, smoothing_window)


def detect_turns_arrays(
    t: np.ndarray,
    x: np.ndarray,
    rate: float,
    prominence: float = DEFAULT_PROMINENCE,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    max_gap: float = DEFAULT_MAX_GAP,
) -> list[TurnPoint]:
    """Direction-change points: prominent extrema of the position series.

    Maxima are tip turns, minima frog turns. Kinds alternate; when two
    detections of one kind are adjacent the more extreme survives.
    """
    bridged = _bridged(t, x, max_gap)
    distance = max(1, int(round(min_separation * rate)))
    candidates: list[tuple[int, str]] = []
    for start, end in _valid_runs(np.isfinite(bridged)):
        if end - start < 3:
            continue
        seg = bridged[start:end]
        peaks, _ = find_peaks(seg, prominence=prominence, distance=distance)
        valleys, _ = find_peaks(-seg, prominence=prominence, distance=distance)
        candidates.extend((start + int(i), TIP) for i in peaks)
        candidates.extend((start + int(i), FROG) for i in valleys)
    candidates.sort()

    turns: list[tuple[int, str]] = []
    for idx, kind in candidates:
        if turns and turns[-1][1] == kind:
            prev_idx = turns[-1][0]
            better = (
                bridged[idx] > bridged[prev_idx] if kind == TIP else bridged[idx] < bridged[prev_idx]
            )
            if better:
                turns[-1] = (idx, kind)
            continue
        turns.append((idx, kind))
    return [TurnPoint(idx=i, kind=k) for i, k in turns]


def detect_turns(
    trace,
    prominence: float = DEFAULT_PROMINENCE,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    max_gap: float = DEFAULT_MAX_GAP,
) -> list[TurnPoint]:
    return detect_turns_arrays(
        trace.times(), trace.positions(), trace.nominal_rate, prominence, min_separation, max_gap
    )


def curvature_arrays(
    t: np.ndarray, x: np.ndarray, idx: int, half_window: int = DEFAULT_CURVATURE_HALF_WINDOW
) -> float | None:
    """Curvature of the position-time curve at a turn, or None.

    Fits x(t) ~ a*t^2 + b*t + c over +-half_window samples around the turn
    and evaluates the plane-curve curvature |x''| / (1 + x'^2)^(3/2) at the
    fitted extremum, where the slope vanishes, leaving |2a|. Needs at least
    5 valid positions inside the window.
    """
    lo = max(0, idx - half_window)
    hi = min(len(x), idx + half_window + 1)
    tw = t[lo:hi]
    xw = x[lo:hi]
    ok = np.isfinite(xw)
    if int(ok.sum()) < 5:
        return None
    coeffs = np.polyfit(tw[ok] - t[idx], xw[ok], 2)
    return float(abs(2.0 * coeffs[0]))


def curvature_at(trace, turn: TurnPoint, half_window: int = DEFAULT_CURVATURE_HALF_WINDOW) -> float | None:
    return curvature_arrays(trace.times(), trace.positions(), turn.idx, half_window)


def with_curvatures(
    trace, turns: Sequence[TurnPoint], half_window: int = DEFAULT_CURVATURE_HALF_WINDOW
) -> list[TurnPoint]:
    """Annotate turns with their curvatures (None where not computable)."""
    t = trace.times()
    x = trace.positions()
    return [replace(tp, curvature=curvature_arrays(t, x, tp.idx, half_window)) for tp in turns]


def _reference_level(x: np.ndarray, turns: Sequence[TurnPoint], kind: str) -> float | None:
    at_kind = [x[tp.idx] for tp in turns if tp.kind == kind and np.isfinite(x[tp.idx])]
    if at_kind:
        return float(np.median(at_kind))
    finite = x[np.isfinite(x)]
    if finite.size == 0:
        return None
    return float(finite.min() if kind == FROG else finite.max())


def segment_arrays(
    t: np.ndarray,
    x: np.ndarray,
    turns: Sequence[TurnPoint],
    allow_end_completion: bool = True,
    end_tolerance: float = DEFAULT_PROMINENCE,
    max_gap: float = DEFAULT_MAX_GAP,
) -> Segmentation:
    """Cut the trace into strokes at the turns and pair them into round trips.

    Strokes are half-open index spans between consecutive turns plus the
    leading and trailing partial spans. A boundary stroke only completes a
    round trip when its free end sits at the appropriate reversal level
    (within ``end_tolerance`` of the median turn position of that kind).
    The trailing stroke additionally requires ``allow_end_completion``,
    which distinguishes batch analysis from mid-stream segmentation where
    the final reversal may still be ahead.
    """
    for a, b in zip(turns, turns[1:]):
        if a.kind == b.kind:
            raise ValueError("turns must alternate in kind")
    n = len(x)
    if not turns or n == 0:
        return Segmentation(strokes=(), round_trips=())

    long_gaps = _long_gap_spans(t, x, max_gap)

    def touches_gap(start: int, end: int) -> bool:
        return any(gs < end and start < ge for gs, ge in long_gaps)

    boundaries = [tp.idx for tp in turns]
    spans: list[tuple[int, int, str, bool, bool]] = []  # start, end, direction, start_ok, end_ok

    def direction_for(end_kind: str | None, start_kind: str | None) -> str:
        if end_kind is not None:
            return DOWN if end_kind == TIP else UP
        return UP if start_kind == TIP else DOWN

    # Leading span before the first turn. Its start is in the past, so the
    # level rule applies regardless of allow_end_completion.
    if boundaries[0] >= 2:
        d = direction_for(turns[0].kind, None)
        want = FROG if d == DOWN else TIP
        level = _reference_level(x, turns, want)
        seg = x[: boundaries[0]]
        first_valid = seg[np.isfinite(seg)]
        ok = (
            level is not None
            and first_valid.size > 0
            and abs(float(first_valid[0]) - level) <= end_tolerance
        )
        spans.append((0, boundaries[0], d, ok, True))
    # Interior spans.
    for k in range(len(boundaries) - 1):
        d = direction_for(turns[k + 1].kind, turns[k].kind)
        spans.append((boundaries[k], boundaries[k + 1], d, True, True))
    # Trailing span after the last turn.
    if n - boundaries[-1] >= 2:
        d = direction_for(None, turns[-1].kind)
        want = TIP if d == DOWN else FROG
        level = _reference_level(x, turns, want)
        seg = x[boundaries[-1] :]
        last_valid = seg[np.isfinite(seg)]
        ok = (
            allow_end_completion
            and level is not None
            and last_valid.size > 0
            and abs(float(last_valid[-1]) - level) <= end_tolerance
        )
        spans.append((boundaries[-1], n, d, True, ok))

    strokes = []
    complete = []
    for start, end, d, start_ok, end_ok in spans:
        if end - start < 2:
            continue
        strokes.append(
            Stroke(
                direction=d,
                start_idx=start,
                end_idx=end,
                t_start=float(t[start]),
                t_end=float(t[end - 1]),
                low_confidence=touches_gap(start, end),
            )
        )
        complete.append(start_ok and end_ok)

    trips = []
    for i in range(len(strokes) - 1):
        down, up = strokes[i], strokes[i + 1]
        if (
            down.direction == DOWN
            and up.direction == UP
            and up.start_idx == down.end_idx
            and complete[i]
            and complete[i + 1]
        ):
            trips.append(RoundTrip(down=down, up=up, index=len(trips)))
    return Segmentation(strokes=tuple(strokes), round_trips=tuple(trips))


def segment(
    trace,
    turns: Sequence[TurnPoint],
    allow_end_completion: bool = True,
    end_tolerance: float = DEFAULT_PROMINENCE,
    max_gap: float = DEFAULT_MAX_GAP,
) -> Segmentation:
    return segment_arrays(
        trace.times(), trace.positions(), turns, allow_end_completion, end_tolerance, max_gap
    )
