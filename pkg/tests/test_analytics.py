import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bowtrace import analytics, kinematics
from bowtrace.analytics import (
    DegenerateNormalizationError,
    RegionConfig,
    Thresholds,
    TripMetrics,
    achievement_rate,
    bin_regions,
    cohort_report,
    compare_sessions,
    improvement_rate,
    normalize,
    trip_metrics,
)
from bowtrace.kinematics import detect_turns, segment
from bowtrace.stats import wilcoxon_signed_rank
from bowtrace.synth import BEGINNER, EXPERT, generate_cohort, generate_trace

from conftest import make_trace, triangle_positions


# -- normalize ------------------------------------------------------------------


def test_normalize_affine():
    assert normalize([0.2, 0.7, 1.2]).tolist() == pytest.approx([0.0, 0.5, 1.0])


def test_normalize_degenerate():
    with pytest.raises(DegenerateNormalizationError):
        normalize([5, 5, 5])


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=30).filter(lambda v: min(v) < max(v)))
@settings(max_examples=100, deadline=None)
def test_normalize_preserves_argmax(values):
    normalized = normalize(values)
    # The true maximum maps exactly to 1.0 (monotone map); rounding can at
    # worst create a tie at the top, never displace it.
    assert normalized[int(np.argmax(values))] == normalized.max() == 1.0


# -- region binning ---------------------------------------------------------------


def test_region_boundaries_default_margin():
    config = RegionConfig(exclusion=0.05)
    codes = config.region_codes(np.array([0.10, 0.50, 0.90, 0.02, 0.97]))
    assert codes.tolist() == [0, 1, 2, -1, -1]  # frog, middle, tip, discarded x2


def test_region_boundaries_zero_margin():
    config = RegionConfig(exclusion=0.0)
    codes = config.region_codes(np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 0.5]))
    assert codes.tolist() == [0, 1, 2, 2, 1]


def test_region_config_validation():
    with pytest.raises(ValueError):
        RegionConfig(exclusion=0.5)


def test_bin_regions_beginner_tip_weaker():
    trace = generate_trace(BEGINNER)
    seg = segment(trace, detect_turns(trace))
    bins = bin_regions(trace, seg.strokes)
    assert bins.pressures["tip"].mean() < bins.pressures["frog"].mean()


def test_bin_regions_partition_property():
    trace = generate_trace(BEGINNER)
    seg = segment(trace, detect_turns(trace))
    bins = bin_regions(trace, seg.strokes)
    binned = sum(len(v) for v in bins.indices.values())
    assert binned + bins.discarded == bins.n_valid


def test_bin_regions_direction_filter():
    trace = generate_trace(EXPERT)
    seg = segment(trace, detect_turns(trace))
    down = bin_regions(trace, seg.strokes, direction="down")
    up = bin_regions(trace, seg.strokes, direction="up")
    both = bin_regions(trace, seg.strokes)
    for region in analytics.REGIONS:
        assert len(down.indices[region]) + len(up.indices[region]) == len(both.indices[region])
    # expert frog attack acts on down-bows only
    assert down.pressures["frog"].mean() > up.pressures["frog"].mean()


# -- achievement rate -------------------------------------------------------------


def test_achievement_all_above():
    trace = make_trace([0.5] * 10, pressures=[0.6] * 10)
    assert achievement_rate(trace, 0.5) == 1.0


def test_achievement_half():
    trace = make_trace([0.5, 0.5], pressures=[0.4, 0.6])
    assert achievement_rate(trace, 0.5) == 0.5


def test_achievement_closed_at_floor():
    trace = make_trace([0.5], pressures=[0.5])
    assert achievement_rate(trace, 0.5) == 1.0


def test_achievement_expert_profile():
    trace = generate_trace(EXPERT)
    assert achievement_rate(trace, 0.5) == 1.0


def test_achievement_monotone_in_constant_shift():
    trace = generate_trace(BEGINNER)
    base = achievement_rate(trace, 0.5)
    shifted = make_trace(
        [s.position if s.valid_position else None for s in trace.samples],
        pressures=trace.pressures() + 0.2,
    )
    assert achievement_rate(shifted, 0.5) >= base


# -- trip metrics -----------------------------------------------------------------


def make_trip(trace):
    seg = segment(trace, detect_turns(trace))
    assert seg.round_trips
    return seg.round_trips[0]


def test_trip_metrics_constant_pressure():
    trace = make_trace(triangle_positions(768), pressures=[0.8] * 768)
    tm = trip_metrics(make_trip(trace), trace)
    assert tm.valid
    assert tm.diff == pytest.approx(0.0, abs=1e-12)
    assert not tm.exceeds
    assert all(s.mean == pytest.approx(0.8, abs=1e-12) for s in tm.summaries)


def region_pressures_trace(frog, middle, tip, n=768):
    positions = triangle_positions(n)
    config = RegionConfig()
    codes = config.region_codes(positions)
    pressures = np.full(n, (frog + middle + tip) / 3)
    pressures[codes == 0] = frog
    pressures[codes == 1] = middle
    pressures[codes == 2] = tip
    return make_trace(positions, pressures=pressures)


def test_trip_metrics_diff_max_minus_min():
    trace = region_pressures_trace(0.9, 0.8, 0.6)
    tm = trip_metrics(make_trip(trace), trace)
    assert tm.diff == pytest.approx(0.3)
    assert tm.exceeds  # 0.3 > 0.17
    by_region = {s.region: s.mean for s in tm.summaries}
    assert by_region == pytest.approx({"frog": 0.9, "middle": 0.8, "tip": 0.6})


def test_trip_metrics_occluded_region_invalid():
    positions = list(triangle_positions(768))
    config = RegionConfig()
    codes = config.region_codes(np.asarray(positions))
    trip = make_trip(make_trace(triangle_positions(768)))
    for i in range(trip.start_idx, trip.end_idx):
        if codes[i] == 2:  # occlude the whole tip region within the trip
            positions[i] = None
    trace = make_trace(positions)
    tm = analytics.trip_metrics_arrays(
        trace.pressures(), trace.positions(), trip, config, Thresholds()
    )
    assert not tm.valid
    assert tm.diff is None
    assert not tm.exceeds


def test_trip_means_match_brute_force():
    trace = generate_trace(BEGINNER)
    seg = segment(trace, detect_turns(trace))
    config = RegionConfig()
    for trip in seg.round_trips:
        tm = trip_metrics(trip, trace, config)
        for code, summary in enumerate(tm.summaries):
            values = [
                s.pressure
                for s in trace.samples[trip.start_idx : trip.end_idx]
                if s.valid_position
                and config.region_codes(np.array([s.position]))[0] == code
            ]
            assert summary.n == len(values)
            if values:
                assert summary.mean == pytest.approx(float(np.mean(values)), abs=1e-12)


def test_trip_diff_shift_invariant():
    trace = generate_trace(BEGINNER)
    seg = segment(trace, detect_turns(trace))
    shifted = make_trace(
        [s.position if s.valid_position else None for s in trace.samples],
        pressures=trace.pressures() + 1.0,
    )
    for trip in seg.round_trips:
        a = trip_metrics(trip, trace)
        b = trip_metrics(trip, shifted)
        assert a.diff == pytest.approx(b.diff, abs=1e-12)


# -- improvement rate --------------------------------------------------------------


def fake_trips(diffs, ceiling=0.17):
    thresholds = Thresholds(diff_ceiling=ceiling)
    trips = []
    for i, d in enumerate(diffs):
        trips.append(
            TripMetrics(
                trip_index=i,
                summaries=tuple(
                    analytics.RegionSummary(region=r, n=1, min=d, q1=d, median=d, q3=d, max=d, mean=d)
                    for r in analytics.REGIONS
                ),
                diff=d,
                exceeds=d > thresholds.diff_ceiling,
                valid=True,
            )
        )
    return trips


def test_improvement_rate_worked_example():
    trips = fake_trips([0.3, 0.2, 0.25, 0.1])
    assert improvement_rate(trips) == pytest.approx(2 / 3)


def test_improvement_rate_no_exceedances():
    assert improvement_rate(fake_trips([0.1, 0.1, 0.1])) is None


def test_improvement_rate_single_pair():
    assert improvement_rate(fake_trips([0.5, 0.4])) == 1.0


def test_improvement_rate_streaming_equals_batch():
    rng = np.random.default_rng(4)
    diffs = rng.uniform(0.0, 0.4, 30).tolist()
    trips = fake_trips(diffs)
    batch = improvement_rate(trips)
    num = den = 0
    for i in range(len(trips) - 1):  # incremental accumulation
        if trips[i].exceeds:
            den += 1
            if trips[i + 1].diff < trips[i].diff:
                num += 1
    streaming = num / den if den else None
    assert streaming == batch


# -- session comparison --------------------------------------------------------------


def test_compare_sessions_identical_vectors():
    entries = compare_sessions({"S0": [1.0, 2.0, 3.0], "S2": [1.0, 2.0, 3.0]})
    assert len(entries) == 1
    assert entries[0].p_value == 1.0
    assert not entries[0].significant
    assert "no effect" in entries[0].note


def test_compare_sessions_three_sessions_three_pairs():
    entries = compare_sessions({"S0": [1, 2], "S2": [2, 3], "S3": [3, 4]})
    assert [e.label for e in entries] == ["S0-vs-S2", "S0-vs-S3", "S2-vs-S3"]
    for e in entries:
        if e.p_value is not None and e.note is None:
            assert e.p_adjusted == min(1.0, e.p_value * 3)


def test_compare_sessions_shifted_cohort_significant():
    rng = np.random.default_rng(10)
    s0 = rng.uniform(0.3, 0.8, 7)
    vectors = {"S0": s0, "S1": s0 + rng.uniform(0.0, 0.05, 7), "S2": s0 + 0.2}
    entries = {e.label: e for e in compare_sessions(vectors)}
    target = entries["S0-vs-S2"]
    # oracle: all 7 differences positive and tied -> W=28, exact p = 2/128
    ref = wilcoxon_signed_rank([0.2] * 7)
    assert target.p_value == pytest.approx(ref.p_value)
    assert target.p_adjusted == pytest.approx(ref.p_value * 3)
    assert target.significant
    assert target.higher == "S2"


def test_compare_sessions_unpaired_rejected():
    with pytest.raises(ValueError, match="paired"):
        compare_sessions({"S0": [1, 2, 3], "S2": [1, 2]})


# -- cohort report ---------------------------------------------------------------------


def test_cohort_identical_groups_no_flags():
    traces = [
        [generate_trace(BEGINNER, duration=25.0, participant=f"X{i}", trial=t) for t in range(2)]
        for i in range(2)
    ]
    report = cohort_report(traces, traces)
    for section in (
        report.group_pressure,
        report.region_pressure,
        report.region_speed,
        report.tercile_speed,
        report.curvature,
    ):
        for entry in section.values():
            assert not entry.significant


def test_cohort_insufficient_group_size():
    traces = [[generate_trace(EXPERT, duration=10.0)]]
    with pytest.raises(ValueError, match="insufficient group size"):
        cohort_report(traces, traces)


def test_cohort_synthetic_findings():
    experts, beginners = generate_cohort(seed=0)
    report = cohort_report(experts, beginners)
    beg_ft = report.region_pressure[("beginner", "down", "frog-vs-tip")]
    assert beg_ft.significant and beg_ft.higher == "frog"
    curv = report.curvature[kinematics.TIP]
    assert curv.significant and curv.higher == "expert"
    assert report.to_text().startswith("cohort comparison")
