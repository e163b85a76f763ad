"""Practice metrics: region binning, per-trip statistics, session and
cohort comparisons.

The usable bow length (after trimming the reversal margins at both ends)
splits into frog/middle/tip thirds. Each round trip gets a box summary of
pressure per region; the spread between the largest and smallest region
mean ("diff") is the quantity the feedback loop tries to shrink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kinematics
from .kinematics import DOWN, FROG, TIP, UP, RoundTrip, Stroke
from .model import Trace
from .stats import (
    DegenerateStatisticError,
    NoEffectError,
    bonferroni,
    box_summary,
    brunner_munzel,
    wilcoxon_signed_rank,
)

REGIONS = ("frog", "middle", "tip")
REGION_PAIRS = (("frog", "middle"), ("middle", "tip"), ("frog", "tip"))
TERCILES = ("low", "mid", "high")
TERCILE_PAIRS = (("low", "mid"), ("mid", "high"), ("low", "high"))


class DegenerateNormalizationError(ValueError):
    """All values equal; min-max normalization is undefined."""


@dataclass(frozen=True)
class RegionConfig:
    """Region boundaries derived from the end-exclusion margin.

    With margin ``exclusion`` = e and usable third L = (1-2e)/3 the regions
    are frog [e, e+L), middle [e+L, e+2L), tip [e+2L, 1-e].
    """

    exclusion: float = 0.05

    def __post_init__(self) -> None:
        if not (0.0 <= self.exclusion < 0.5):
            raise ValueError(f"exclusion margin must lie in [0, 0.5), got {self.exclusion}")

    @property
    def third(self) -> float:
        return (1.0 - 2.0 * self.exclusion) / 3.0

    def region_codes(self, positions: np.ndarray) -> np.ndarray:
        """-1 for excluded/absent, else index into REGIONS."""
        e, third = self.exclusion, self.third
        codes = np.full(len(positions), -1, dtype=int)
        ok = np.isfinite(positions)
        p = np.where(ok, positions, -1.0)
        codes[(p >= e) & (p < e + third)] = 0
        codes[(p >= e + third) & (p < e + 2 * third)] = 1
        codes[(p >= e + 2 * third) & (p <= 1.0 - e)] = 2
        return codes


@dataclass(frozen=True)
class Thresholds:
    pressure_floor: float = 0.5  # newtons; the bar graph turns blue below this
    diff_ceiling: float = 0.17  # newtons; the diff bar turns red above this

    def __post_init__(self) -> None:
        if self.pressure_floor <= 0.0 or self.diff_ceiling <= 0.0:
            raise ValueError("thresholds must be positive")


@dataclass(frozen=True)
class RegionSummary:
    """Distribution of pressure within one bow region over one round trip."""

    region: str
    n: int
    min: float | None = None
    q1: float | None = None
    median: float | None = None
    q3: float | None = None
    max: float | None = None
    mean: float | None = None

    @property
    def valid(self) -> bool:
        return self.n >= 1


@dataclass(frozen=True)
class TripMetrics:
    trip_index: int
    summaries: tuple[RegionSummary, RegionSummary, RegionSummary]  # frog, middle, tip
    diff: float | None
    exceeds: bool
    valid: bool


@dataclass(frozen=True)
class RegionBins:
    """Per-region sample sets produced by :func:`bin_regions`."""

    indices: dict[str, np.ndarray]
    pressures: dict[str, np.ndarray]
    speeds: dict[str, np.ndarray]
    discarded: int
    n_valid: int


def normalize(values) -> np.ndarray:
    """Min-max normalization onto [0, 1]."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        raise DegenerateNormalizationError("need at least 2 values to normalize")
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        raise DegenerateNormalizationError("all values equal; normalization undefined")
    return (arr - lo) / (hi - lo)


def _direction_mask(n: int, strokes: Sequence[Stroke] | None, direction: str | None) -> np.ndarray:
    if strokes is None:
        if direction is not None:
            raise ValueError("direction filtering requires strokes")
        return np.ones(n, dtype=bool)
    mask = np.zeros(n, dtype=bool)
    for stroke in strokes:
        if direction is None or stroke.direction == direction:
            mask[stroke.start_idx : stroke.end_idx] = True
    return mask


def bin_regions(
    trace: Trace,
    strokes: Sequence[Stroke] | None,
    config: RegionConfig = RegionConfig(),
    direction: str | None = None,
    speeds: np.ndarray | None = None,
) -> RegionBins:
    """Assign valid-position samples to bow regions.

    Samples inside the exclusion margins are discarded. When ``strokes`` is
    given only samples inside those strokes are considered, optionally
    restricted to one stroke ``direction``. ``speeds`` (per-sample, NaN
    absent) defaults to the samples' stored speed values.
    """
    positions = trace.positions()
    pressures = trace.pressures()
    if speeds is None:
        speeds = trace.speeds()
    considered = _direction_mask(len(positions), strokes, direction) & np.isfinite(positions)
    codes = config.region_codes(positions)
    indices = {}
    press = {}
    spd = {}
    for code, region in enumerate(REGIONS):
        sel = np.flatnonzero(considered & (codes == code))
        indices[region] = sel
        press[region] = pressures[sel]
        region_speeds = speeds[sel]
        spd[region] = region_speeds[np.isfinite(region_speeds)]
    n_valid = int(considered.sum())
    binned = sum(len(v) for v in indices.values())
    return RegionBins(
        indices=indices,
        pressures=press,
        speeds=spd,
        discarded=n_valid - binned,
        n_valid=n_valid,
    )


def achievement_rate(trace: Trace, floor: float = Thresholds().pressure_floor) -> float:
    """Fraction of samples at or above the pressure floor (all samples)."""
    if len(trace) == 0:
        raise ValueError("achievement_rate needs a non-empty trace")
    return float(np.mean(trace.pressures() >= floor))


def _region_summary(region: str, values: np.ndarray) -> RegionSummary:
    if values.size == 0:
        return RegionSummary(region=region, n=0)
    b = box_summary(values)
    return RegionSummary(
        region=region, n=b.n, min=b.min, q1=b.q1, median=b.median, q3=b.q3, max=b.max, mean=b.mean
    )


def trip_metrics_arrays(
    pressures: np.ndarray,
    positions: np.ndarray,
    trip: RoundTrip,
    config: RegionConfig,
    thresholds: Thresholds,
) -> TripMetrics:
    """Array-level core of :func:`trip_metrics` (used by the live service)."""
    span = slice(trip.start_idx, trip.end_idx)
    pos = positions[span]
    prs = pressures[span]
    codes = config.region_codes(pos)
    summaries = tuple(
        _region_summary(region, prs[codes == code]) for code, region in enumerate(REGIONS)
    )
    if all(s.valid for s in summaries):
        means = [s.mean for s in summaries]
        diff = float(max(means) - min(means))
        return TripMetrics(
            trip_index=trip.index,
            summaries=summaries,  # type: ignore[arg-type]
            diff=diff,
            exceeds=diff > thresholds.diff_ceiling,
            valid=True,
        )
    return TripMetrics(
        trip_index=trip.index,
        summaries=summaries,  # type: ignore[arg-type]
        diff=None,
        exceeds=False,
        valid=False,
    )


def trip_metrics(
    trip: RoundTrip,
    trace: Trace,
    config: RegionConfig = RegionConfig(),
    thresholds: Thresholds = Thresholds(),
) -> TripMetrics:
    """Region box summaries and mean spread for one round trip."""
    return trip_metrics_arrays(trace.pressures(), trace.positions(), trip, config, thresholds)


def improvement_rate(
    trips: Sequence[TripMetrics], thresholds: Thresholds = Thresholds()
) -> float | None:
    """Among trips whose diff exceeded the ceiling (never the last trip),
    the fraction followed by a smaller diff. None when no trip exceeded."""
    numerator = 0
    denominator = 0
    for current, following in zip(trips, trips[1:]):
        if not (current.valid and following.valid):
            continue
        if not current.exceeds:
            continue
        denominator += 1
        if following.diff < current.diff:
            numerator += 1
    if denominator == 0:
        return None
    return numerator / denominator


@dataclass(frozen=True)
class ComparisonEntry:
    """One statistical comparison inside a report."""

    label: str
    n: tuple[int, ...]
    statistic: float | None
    p_value: float | None
    p_adjusted: float | None
    significant: bool
    higher: str | None = None  # which side had the larger mean, if any
    note: str | None = None


def compare_sessions(
    metrics_by_session: Mapping[str, Sequence[float]], alpha: float = 0.05
) -> list[ComparisonEntry]:
    """Pairwise Wilcoxon signed-rank tests between sessions, Bonferroni-adjusted.

    Vectors must be aligned participant-by-participant. Identical vectors
    (all differences zero) are reported as no-effect with p = 1.
    """
    labels = list(metrics_by_session)
    if len(labels) < 2:
        raise ValueError("compare_sessions needs at least 2 sessions")
    length = len(metrics_by_session[labels[0]])
    for label in labels:
        if len(metrics_by_session[label]) != length:
            raise ValueError("session vectors must be paired (equal length)")
    pairs = [(a, b) for i, a in enumerate(labels) for b in labels[i + 1 :]]
    m = len(pairs)
    entries = []
    for a, b in pairs:
        xa = np.asarray(metrics_by_session[a], dtype=float)
        xb = np.asarray(metrics_by_session[b], dtype=float)
        diffs = xb - xa
        label = f"{a}-vs-{b}"
        higher = b if float(xb.mean()) > float(xa.mean()) else a
        try:
            result = wilcoxon_signed_rank(diffs, alpha=alpha)
        except NoEffectError:
            entries.append(
                ComparisonEntry(
                    label=label,
                    n=(length,),
                    statistic=None,
                    p_value=1.0,
                    p_adjusted=1.0,
                    significant=False,
                    higher=None,
                    note="no effect: all paired differences are zero",
                )
            )
            continue
        p_adj = bonferroni([result.p_value], m)[0]
        entries.append(
            ComparisonEntry(
                label=label,
                n=result.n,
                statistic=result.statistic,
                p_value=result.p_value,
                p_adjusted=p_adj,
                significant=p_adj < alpha,
                higher=higher if float(np.mean(diffs)) != 0.0 else None,
            )
        )
    return entries


# ---------------------------------------------------------------------------
# Cohort comparison (experienced vs beginner groups)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubjectFeatures:
    """Per-subject aggregates pooled over that subject's traces."""

    pressure_max: float
    pressure_min: float
    pressure_range: float
    # mean normalized pressure / speed per (direction, region)
    region_pressure: dict[tuple[str, str], float]
    region_speed: dict[tuple[str, str], float]
    tercile_speed: dict[str, float]  # mean normalized speed per pressure tercile
    curvature: dict[str, float]  # mean turn curvature per kind (tip/frog)


@dataclass(frozen=True)
class CohortReport:
    group_pressure: dict[str, ComparisonEntry]  # max / min / range, expert vs beginner
    region_pressure: dict[tuple[str, str, str], ComparisonEntry]  # (group, direction, pair)
    region_speed: dict[tuple[str, str, str], ComparisonEntry]
    tercile_speed: dict[tuple[str, str], ComparisonEntry]  # (group, pair)
    curvature: dict[str, ComparisonEntry]  # turn kind, expert vs beginner
    n_subjects: tuple[int, int]

    def to_text(self) -> str:
        lines = ["cohort comparison (experienced vs beginners)", ""]

        def fmt(entry: ComparisonEntry) -> str:
            flag = "*" if entry.significant else " "
            if entry.note:
                return f"  {entry.label:<34} {entry.note}"
            p_adj = "" if entry.p_adjusted is None else f" adj={entry.p_adjusted:.4f}"
            higher = f" higher={entry.higher}" if entry.higher else ""
            return f" {flag}{entry.label:<34} p={entry.p_value:.4f}{p_adj}{higher}"

        lines.append("pressure level (Brunner-Munzel, expert vs beginner):")
        lines.extend(fmt(e) for e in self.group_pressure.values())
        lines.append("")
        lines.append("pressure by region (Wilcoxon + Bonferroni, within group):")
        lines.extend(fmt(e) for e in self.region_pressure.values())
        lines.append("")
        lines.append("speed by region (Wilcoxon + Bonferroni, within group):")
        lines.extend(fmt(e) for e in self.region_speed.values())
        lines.append("")
        lines.append("speed by pressure tercile (Wilcoxon + Bonferroni, within group):")
        lines.extend(fmt(e) for e in self.tercile_speed.values())
        lines.append("")
        lines.append("turn curvature (Brunner-Munzel, expert vs beginner):")
        lines.extend(fmt(e) for e in self.curvature.values())
        return "\n".join(lines) + "\n"


def _subject_features(
    traces: Sequence[Trace],
    config: RegionConfig,
    smoothing_window: int,
    prominence: float,
    min_separation: float,
    half_window: int,
) -> SubjectFeatures:
    all_pressure: list[np.ndarray] = []
    all_speed: list[np.ndarray] = []
    per_trace: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
    trace_stats = []
    curvatures: dict[str, list[float]] = {TIP: [], FROG: []}

    for trace in traces:
        pressures = trace.pressures()
        positions = trace.positions()
        speeds = kinematics.speed(trace, smoothing_window)
        turns = kinematics.detect_turns(trace, prominence, min_separation)
        seg = kinematics.segment(trace, turns)
        directions = np.array([""] * len(trace), dtype=object)
        for stroke in seg.strokes:
            directions[stroke.start_idx : stroke.end_idx] = stroke.direction
        for tp in kinematics.with_curvatures(trace, turns, half_window):
            if tp.curvature is not None:
                curvatures[tp.kind].append(tp.curvature)
        trace_stats.append(
            (float(pressures.max()), float(pressures.min()))
        )
        all_pressure.append(pressures)
        all_speed.append(speeds)
        per_trace.append((pressures, positions, speeds, directions))

    pooled_pressure = np.concatenate(all_pressure)
    pooled_speed = np.concatenate(all_speed)
    finite_speed = pooled_speed[np.isfinite(pooled_speed)]
    p_lo, p_hi = float(pooled_pressure.min()), float(pooled_pressure.max())
    s_lo, s_hi = float(finite_speed.min()), float(finite_speed.max())
    if p_lo == p_hi:
        raise DegenerateNormalizationError("subject pressure has no spread")
    if s_lo == s_hi:
        raise DegenerateNormalizationError("subject speed has no spread")

    region_pressure_sets: dict[tuple[str, str], list[np.ndarray]] = {}
    region_speed_sets: dict[tuple[str, str], list[np.ndarray]] = {}
    press_with_speed: list[np.ndarray] = []
    speed_with_press: list[np.ndarray] = []
    for pressures, positions, speeds, directions in per_trace:
        codes = config.region_codes(positions)
        for direction in (DOWN, UP):
            dir_mask = directions == direction
            for code, region in enumerate(REGIONS):
                sel = dir_mask & (codes == code)
                key = (direction, region)
                region_pressure_sets.setdefault(key, []).append(pressures[sel])
                region_speed = speeds[sel]
                region_speed_sets.setdefault(key, []).append(
                    region_speed[np.isfinite(region_speed)]
                )
        both = np.isfinite(speeds)
        press_with_speed.append(pressures[both])
        speed_with_press.append(speeds[both])

    def norm_p(values: np.ndarray) -> np.ndarray:
        return (values - p_lo) / (p_hi - p_lo)

    def norm_s(values: np.ndarray) -> np.ndarray:
        return (values - s_lo) / (s_hi - s_lo)

    region_pressure = {}
    region_speed = {}
    for key in region_pressure_sets:
        pooled = np.concatenate(region_pressure_sets[key])
        region_pressure[key] = float(norm_p(pooled).mean()) if pooled.size else math.nan
        pooled_s = np.concatenate(region_speed_sets[key])
        region_speed[key] = float(norm_s(pooled_s).mean()) if pooled_s.size else math.nan

    paired_p = norm_p(np.concatenate(press_with_speed))
    paired_s = norm_s(np.concatenate(speed_with_press))
    t1, t2 = np.quantile(paired_p, [1.0 / 3.0, 2.0 / 3.0])
    stage_sel = {
        "low": paired_p < t1,
        "mid": (paired_p >= t1) & (paired_p < t2),
        "high": paired_p >= t2,
    }
    tercile_speed = {
        stage: (float(paired_s[sel].mean()) if sel.any() else math.nan)
        for stage, sel in stage_sel.items()
    }

    maxima = [s[0] for s in trace_stats]
    minima = [s[1] for s in trace_stats]
    return SubjectFeatures(
        pressure_max=float(np.mean(maxima)),
        pressure_min=float(np.mean(minima)),
        pressure_range=float(np.mean([hi - lo for hi, lo in zip(maxima, minima)])),
        region_pressure=region_pressure,
        region_speed=region_speed,
        tercile_speed=tercile_speed,
        curvature={
            kind: float(np.mean(vals)) for kind, vals in curvatures.items() if vals
        },
    )


def _paired_entry(
    label: str, a: np.ndarray, b: np.ndarray, names: tuple[str, str], m: int, alpha: float
) -> ComparisonEntry:
    ok = np.isfinite(a) & np.isfinite(b)
    a, b = a[ok], b[ok]
    if len(a) < 2:
        return ComparisonEntry(
            label=label,
            n=(len(a),),
            statistic=None,
            p_value=None,
            p_adjusted=None,
            significant=False,
            note="insufficient paired data",
        )
    higher = names[0] if float(a.mean()) > float(b.mean()) else names[1]
    try:
        result = wilcoxon_signed_rank(a - b, alpha=alpha)
    except NoEffectError:
        return ComparisonEntry(
            label=label,
            n=(len(a),),
            statistic=None,
            p_value=1.0,
            p_adjusted=1.0,
            significant=False,
            note="no effect: all paired differences are zero",
        )
    p_adj = bonferroni([result.p_value], m)[0]
    return ComparisonEntry(
        label=label,
        n=result.n,
        statistic=result.statistic,
        p_value=result.p_value,
        p_adjusted=p_adj,
        significant=p_adj < alpha,
        higher=higher if float(np.mean(a - b)) != 0.0 else None,
    )


def _group_entry(label: str, experts: np.ndarray, beginners: np.ndarray, alpha: float) -> ComparisonEntry:
    ok_e = np.isfinite(experts)
    ok_b = np.isfinite(beginners)
    experts, beginners = experts[ok_e], beginners[ok_b]
    if len(experts) < 2 or len(beginners) < 2:
        return ComparisonEntry(
            label=label,
            n=(len(experts), len(beginners)),
            statistic=None,
            p_value=None,
            p_adjusted=None,
            significant=False,
            note="insufficient group data",
        )
    higher = "expert" if float(experts.mean()) > float(beginners.mean()) else "beginner"
    try:
        result = brunner_munzel(experts, beginners, alpha=alpha)
    except DegenerateStatisticError as exc:
        return ComparisonEntry(
            label=label,
            n=(len(experts), len(beginners)),
            statistic=None,
            p_value=None,
            p_adjusted=None,
            significant=False,
            higher=higher,
            note=f"degenerate: {exc}",
        )
    return ComparisonEntry(
        label=label,
        n=result.n,
        statistic=result.statistic,
        p_value=result.p_value,
        p_adjusted=None,
        significant=result.p_value < alpha,
        higher=higher,
    )


def cohort_report(
    experts: Sequence[Sequence[Trace]],
    beginners: Sequence[Sequence[Trace]],
    config: RegionConfig = RegionConfig(),
    alpha: float = 0.05,
    smoothing_window: int = kinematics.DEFAULT_SMOOTHING_WINDOW,
    prominence: float = kinematics.DEFAULT_PROMINENCE,
    min_separation: float = kinematics.DEFAULT_MIN_SEPARATION,
    half_window: int = kinematics.DEFAULT_CURVATURE_HALF_WINDOW,
) -> CohortReport:
    """Full between/within-group analysis battery.

    ``experts`` and ``beginners`` hold one trace list per subject. Pressure
    and speed are min-max normalized per subject before any within-group
    region comparison; group-level pressure extremes and turn curvatures
    use raw values.
    """
    if len(experts) < 2 or len(beginners) < 2:
        raise ValueError("insufficient group size: need at least 2 subjects per group")

    feats_e = [
        _subject_features(traces, config, smoothing_window, prominence, min_separation, half_window)
        for traces in experts
    ]
    feats_b = [
        _subject_features(traces, config, smoothing_window, prominence, min_separation, half_window)
        for traces in beginners
    ]

    group_pressure = {}
    for metric in ("max", "min", "range"):
        attr = f"pressure_{metric}"
        group_pressure[metric] = _group_entry(
            f"pressure {metric}",
            np.array([getattr(f, attr) for f in feats_e]),
            np.array([getattr(f, attr) for f in feats_b]),
            alpha,
        )

    region_pressure = {}
    region_speed = {}
    for group, feats in (("expert", feats_e), ("beginner", feats_b)):
        for direction in (DOWN, UP):
            for ra, rb in REGION_PAIRS:
                pair = f"{ra}-vs-{rb}"
                label = f"{group} {direction} {pair}"
                a_p = np.array([f.region_pressure.get((direction, ra), math.nan) for f in feats])
                b_p = np.array([f.region_pressure.get((direction, rb), math.nan) for f in feats])
                region_pressure[(group, direction, pair)] = _paired_entry(
                    f"{label} pressure", a_p, b_p, (ra, rb), 3, alpha
                )
                a_s = np.array([f.region_speed.get((direction, ra), math.nan) for f in feats])
                b_s = np.array([f.region_speed.get((direction, rb), math.nan) for f in feats])
                region_speed[(group, direction, pair)] = _paired_entry(
                    f"{label} speed", a_s, b_s, (ra, rb), 3, alpha
                )

    tercile_speed = {}
    for group, feats in (("expert", feats_e), ("beginner", feats_b)):
        for ta, tb in TERCILE_PAIRS:
            pair = f"{ta}-vs-{tb}"
            a = np.array([f.tercile_speed.get(ta, math.nan) for f in feats])
            b = np.array([f.tercile_speed.get(tb, math.nan) for f in feats])
            tercile_speed[(group, pair)] = _paired_entry(
                f"{group} speed {pair} pressure", a, b, (ta, tb), 3, alpha
            )

    curvature = {}
    for kind in (TIP, FROG):
        curvature[kind] = _group_entry(
            f"curvature at {kind}",
            np.array([f.curvature.get(kind, math.nan) for f in feats_e]),
            np.array([f.curvature.get(kind, math.nan) for f in feats_b]),
            alpha,
        )

    return CohortReport(
        group_pressure=group_pressure,
        region_pressure=region_pressure,
        region_speed=region_speed,
        tercile_speed=tercile_speed,
        curvature=curvature,
        n_subjects=(len(experts), len(beginners)),
    )
