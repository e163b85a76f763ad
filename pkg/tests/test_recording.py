import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bowtrace.model import MARKER_LABELS, Sample, Session, Trace, TraceMeta
from bowtrace.recording import (
    RecordingError,
    parse_recording,
    read_recording,
    read_session,
    render_recording,
    write_recording,
    write_session,
)
from bowtrace.synth import EXPERT, generate_trace


def roundtrip(trace: Trace) -> Trace:
    buf = io.StringIO()
    write_recording(trace, buf)
    return parse_recording(buf.getvalue())


def test_empty_trace_roundtrip(tmp_path):
    trace = Trace(samples=(), tare_offset=1.5, meta=TraceMeta(participant="P01", session="S0"))
    path = tmp_path / "empty.bowtrace"
    n = write_recording(trace, path)
    assert n == len(path.read_bytes())
    back = read_recording(path)
    assert back == trace
    # header-only file
    assert all(line.startswith("#") for line in path.read_text().splitlines())


def test_synthetic_1500_roundtrip_exact():
    trace = generate_trace(EXPERT)
    assert len(trace) == 1500
    assert roundtrip(trace) == trace


def test_occlusion_mask_preserved():
    samples = (
        Sample(t=0.0, pressure=0.5, position=0.2, valid_position=True),
        Sample(t=0.1, pressure=0.5),  # occluded: no markers, no position
        Sample(t=0.2, pressure=0.5, markers={"b0": (0.1, 0.2, 0.3)}, position=0.4, valid_position=True),
    )
    back = roundtrip(Trace(samples=samples))
    assert [s.valid_position for s in back.samples] == [True, False, True]
    assert back.samples[1].position is None
    assert back.samples[1].markers == {}
    assert back.samples[2].markers == {"b0": (0.1, 0.2, 0.3)}


def test_golden_fixture_values(data_dir):
    trace = read_recording(data_dir / "golden_10.bowtrace")
    assert len(trace) == 10
    assert trace.tare_offset == 1.94
    assert trace.calibration_factor == 0.06
    assert trace.meta.participant == "P07"
    assert trace.meta.session == "S2"
    assert trace.meta.trial == 1
    assert trace.meta.started_at == "2025-03-14T10:30:00"
    assert trace.pressures().tolist() == [0.54, 0.6, 0.66, 0.72, 0.72, 0.78, 0.84, 0.84, 0.78, 0.9]
    assert trace.samples[0].position == 0.05
    assert trace.samples[0].speed is None
    assert trace.samples[1].speed == 0.9
    assert not trace.samples[3].valid_position
    assert trace.samples[0].markers["v0"] == (-0.16, 0.0, 0.0)
    assert trace.samples[5].markers["v2"] == (0.05, -0.08, 0.02)
    assert trace.samples[9].markers["b0"] == (0.28, 0.38, 0.14)


def test_non_monotonic_rejected():
    text = (
        "#version=1\n#participant=\n#session=\n#trial=0\n#tempo_bpm=75.0\n"
        "#rate_fps=60.0\n#tare_offset_N=0.0\n#calibration_factor=1.0\n"
        + "0.0,0.5" + "," * 33 + "0\n"
        + "0.016,0.5" + "," * 33 + "0\n"
        + "0.016,0.5" + "," * 33 + "0\n"
    )
    with pytest.raises(RecordingError, match="non-monotonic timestamp at sample 2"):
        parse_recording(text)


def test_unsupported_version_rejected():
    text = "#version=99\n#trial=0\n#tempo_bpm=75.0\n#rate_fps=60.0\n#tare_offset_N=0.0\n#calibration_factor=1.0\n"
    with pytest.raises(RecordingError, match="unsupported recording version"):
        parse_recording(text)


def test_errors_name_the_line(data_dir):
    good = (data_dir / "golden_10.bowtrace").read_text()
    bad = good.replace("0.02,0.6", "0.02,oops", 1)
    with pytest.raises(RecordingError, match=r"line 11"):
        parse_recording(bad)


@pytest.mark.parametrize(
    "mutation, pattern",
    [
        # position out of range on a valid sample
        ((",0.05,,1\n", ",1.5,,1\n"), r"\[0, 1\]"),
        # valid flag set but position removed
        ((",0.05,,1\n", ",,,1\n"), "requires a position"),
        # speed present on an invalid sample
        ((",,,,,0\n0.08", ",,,,2.0,0\n0.08"), "absent"),
        # wrong column count
        (("0.0,0.54,", "0.0,0.54,1.0,"), "columns"),
        # bad validity cell
        (("0.28,0.38,0.14,,,,,,,,,,,,,0.32,1.2,1", "0.28,0.38,0.14,,,,,,,,,,,,,0.32,1.2,2"), "validity"),
    ],
)
def test_reader_rejects_invariant_violations(data_dir, mutation, pattern):
    good = (data_dir / "golden_10.bowtrace").read_text()
    old, new = mutation
    assert old in good
    with pytest.raises(RecordingError, match=pattern):
        parse_recording(good.replace(old, new, 1))


point = st.tuples(
    st.floats(-1, 1, allow_nan=False), st.floats(-1, 1, allow_nan=False), st.floats(-1, 1, allow_nan=False)
)


@st.composite
def traces(draw):
    n = draw(st.integers(0, 40))
    samples = []
    t = 0.0
    for _ in range(n):
        t += draw(st.floats(1e-4, 0.1, allow_nan=False))
        pressure = draw(st.floats(-5, 5, allow_nan=False))
        markers = draw(
            st.dictionaries(st.sampled_from(MARKER_LABELS), point, max_size=10)
        )
        if draw(st.booleans()):
            samples.append(
                Sample(
                    t=t,
                    pressure=pressure,
                    markers=markers,
                    position=draw(st.floats(0, 1, allow_nan=False)),
                    speed=draw(st.one_of(st.none(), st.floats(0, 10, allow_nan=False))),
                    valid_position=True,
                )
            )
        else:
            samples.append(Sample(t=t, pressure=pressure, markers=markers))
    return Trace(
        samples=tuple(samples),
        tare_offset=draw(st.floats(-2, 2, allow_nan=False)),
        calibration_factor=draw(st.floats(0.001, 1, allow_nan=False)),
        nominal_rate=draw(st.sampled_from([30.0, 60.0, 120.0])),
        meta=TraceMeta(participant="P", session="S", trial=draw(st.integers(0, 5))),
    )


@given(traces())
@settings(max_examples=60, deadline=None)
def test_roundtrip_identity_property(trace):
    assert roundtrip(trace) == trace


def test_render_is_deterministic():
    trace = generate_trace(EXPERT)
    assert render_recording(trace) == render_recording(trace)


def test_session_roundtrip(tmp_path):
    traces = tuple(
        generate_trace(EXPERT, duration=2.0, participant="P01", session="S0", trial=i)
        for i in range(2)
    )
    session = Session(label="S0", traces=traces, group="explanation-plus-system")
    write_session(session, tmp_path / "S0")
    back = read_session(tmp_path / "S0")
    assert back == session


def test_missing_manifest(tmp_path):
    with pytest.raises(RecordingError, match="manifest"):
        read_session(tmp_path)
