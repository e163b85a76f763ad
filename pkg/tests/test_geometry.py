import numpy as np
import pytest

from bowtrace.geometry import (
    AxisConfig,
    CalibrationError,
    GeometryError,
    InstrumentModel,
    Line,
    OcclusionError,
    calibrate,
    closest_params,
    contact,
    fit_axes,
    fit_line,
    load_axis_config,
    make_position_solver,
    save_axis_config,
)
from bowtrace.synth import default_instrument, generate_marker_stream, generate_trace, EXPERT


UNIT_MODEL = InstrumentModel(
    string_axis=Line((0.0, 0.0, 0.0), (1.0, 0.0, 0.0)),
    bow_axis=Line((0.5, 0.0, 0.0), (0.0, 1.0, 0.0)),
    frog_param=0.0,
    tip_param=1.0,
)


def frame_at(position: float, model: InstrumentModel = None) -> dict:
    """Markers for a single synthetic frame at the given bow position."""
    model = model or default_instrument()
    trace = generate_trace(EXPERT, duration=1.0 / 60.0)
    import dataclasses

    sample = dataclasses.replace(trace.samples[0], position=position, valid_position=True)
    trace = dataclasses.replace(trace, samples=(sample,))
    return generate_marker_stream(trace, model)[0].points


def test_fit_line_through_two_points():
    line = fit_line([(0.0, 0.0, 0.0), (1.0, 1.0, 0.0)], orient=(1.0, 1.0, 0.0))
    d = np.asarray(line.direction)
    assert np.allclose(np.abs(d), [1 / np.sqrt(2), 1 / np.sqrt(2), 0.0])
    assert np.dot(d, [1, 1, 0]) > 0


def test_fit_line_least_squares_bound():
    # 3 collinear points, one perturbed by 1e-3 m: fit stays within 1e-3.
    pts = np.array([[0.0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])
    pts[1, 1] += 1e-3
    line = fit_line(pts, orient=(1, 0, 0))
    # distance of the true line's points from the fitted line
    p0 = np.asarray(line.point)
    d = np.asarray(line.direction)
    for q in [(0.0, 0, 0), (1.0, 0, 0)]:
        v = np.asarray(q) - p0
        dist = np.linalg.norm(v - np.dot(v, d) * d)
        assert dist < 1e-3


def test_fit_axes_occlusion():
    markers = {"v0": (0, 0, 0), "v1": (1, 0, 0), "b0": (0, 1, 0)}  # one bow marker only
    with pytest.raises(OcclusionError, match="bow axis occluded"):
        fit_axes(markers, AxisConfig())
    with pytest.raises(OcclusionError):
        fit_axes({"v0": (0, 0, 0)}, AxisConfig())


def test_contact_midpoint():
    string = Line((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    bow = Line((0.5, -0.5, 0.0), (0.0, 1.0, 0.0))  # anchored at the hair midpoint-0.5
    model = InstrumentModel(string_axis=string, bow_axis=bow, frog_param=0.0, tip_param=1.0)
    sol = contact(string, bow, model)
    assert sol.raw_param == pytest.approx(0.5)
    assert sol.position == pytest.approx(0.5)
    assert sol.gap == pytest.approx(0.0)
    assert sol.warning is None


def test_contact_at_frog_endpoint():
    string = Line((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    bow = Line((0.5, 0.0, 0.0), (0.0, 1.0, 0.0))  # crosses at the anchor itself
    sol = contact(string, bow, UNIT_MODEL)
    assert sol.position == 0.0
    assert sol.gap == pytest.approx(0.0)


def test_contact_clamps_overshoot():
    string = Line((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    bow = Line((0.5, 1.5, 0.0), (0.0, 1.0, 0.0))  # closest point at raw_param -1.5
    sol = contact(string, bow, UNIT_MODEL)
    assert sol.raw_param == pytest.approx(-1.5)
    assert sol.position == 0.0  # clamped


def test_contact_parallel_raises():
    string = Line((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    bow = Line((0.0, 0.1, 0.0), (1.0, 1e-9, 0.0))
    with pytest.raises(GeometryError, match="parallel"):
        contact(string, bow, UNIT_MODEL)


def test_contact_gap_warning():
    string = Line((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    bow = Line((0.5, 0.0, 0.06), (0.0, 1.0, 0.0))  # 6 cm above the string
    sol = contact(string, bow, UNIT_MODEL)
    assert sol.gap == pytest.approx(0.06)
    assert sol.warning is not None and "implausible" in sol.warning


def test_randomized_inversion_noise_free():
    model = default_instrument()
    solver = make_position_solver(model)
    rng = np.random.default_rng(123)
    for position in rng.uniform(0.0, 1.0, 100):
        sol = solver(frame_at(float(position), model))
        assert abs(sol.position - position) < 1e-9


def test_rigid_motion_invariance():
    model = default_instrument()
    solver = make_position_solver(model)
    rng = np.random.default_rng(5)
    for _ in range(10):
        position = float(rng.uniform(0, 1))
        markers = frame_at(position, model)
        # random rotation (QR of a Gaussian matrix) + translation
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        shift = rng.normal(size=3)
        moved = {k: tuple(q @ np.asarray(v) + shift) for k, v in markers.items()}
        # recalibrate in the moved frame from end captures
        frog = {k: tuple(q @ np.asarray(v) + shift) for k, v in frame_at(0.0, model).items()}
        tip = {k: tuple(q @ np.asarray(v) + shift) for k, v in frame_at(1.0, model).items()}
        fp, tp = calibrate([frog], [tip], model.config)
        moved_model = InstrumentModel(
            string_axis=Line(tuple(q @ np.asarray(model.string_axis.point) + shift),
                             tuple(q @ np.asarray(model.string_axis.direction))),
            bow_axis=Line(tuple(q @ np.asarray(model.bow_axis.point) + shift),
                          tuple(q @ np.asarray(model.bow_axis.direction))),
            frog_param=fp,
            tip_param=tp,
            config=model.config,
        )
        sol = make_position_solver(moved_model)(moved)
        assert abs(sol.position - position) < 1e-9


def test_monotonicity_frog_to_tip():
    model = default_instrument()
    solver = make_position_solver(model)
    last = -1.0
    for position in np.linspace(0.0, 1.0, 50):
        sol = solver(frame_at(float(position), model))
        assert sol.position >= last
        last = sol.position


def test_calibrate_single_frames():
    model = default_instrument()
    fp, tp = calibrate([frame_at(0.0, model)], [frame_at(1.0, model)], model.config)
    assert fp == pytest.approx(model.frog_param, abs=1e-12)
    assert tp == pytest.approx(model.tip_param, abs=1e-12)


def test_calibrate_noisy_frames_median():
    model = default_instrument()
    rng = np.random.default_rng(21)
    noise = 1e-4

    def noisy(position):
        pts = frame_at(position, model)
        return {k: tuple(np.asarray(v) + rng.normal(0, noise, 3)) for k, v in pts.items()}

    frog_frames = [noisy(0.0) for _ in range(11)]
    tip_frames = [noisy(1.0) for _ in range(11)]
    fp, tp = calibrate(frog_frames, tip_frames, model.config)
    assert fp == pytest.approx(model.frog_param, abs=5e-4)
    assert tp == pytest.approx(model.tip_param, abs=5e-4)


def test_calibrate_swapped_ends_detected():
    model = default_instrument()
    with pytest.raises(CalibrationError, match="swapped"):
        calibrate([frame_at(1.0, model)], [frame_at(0.0, model)], model.config)


def test_calibrate_overlapping_captures_rejected():
    model = default_instrument()
    rng = np.random.default_rng(2)

    def cloud(center):
        pts = frame_at(center, model)
        return {k: tuple(np.asarray(v) + rng.normal(0, 0.02, 3)) for k, v in pts.items()}

    # Both captures taken around mid-bow: medians overlap within the spread.
    frog_frames = [cloud(0.5) for _ in range(9)]
    tip_frames = [cloud(0.52) for _ in range(9)]
    with pytest.raises(CalibrationError, match="overlap"):
        calibrate(frog_frames, tip_frames, model.config)


def test_axis_config_roundtrip(tmp_path):
    model = default_instrument()
    path = tmp_path / "axes.cfg"
    save_axis_config(model, path)
    back = load_axis_config(path)
    assert back.frog_param == model.frog_param
    assert back.tip_param == model.tip_param
    assert back.config == model.config
    assert np.allclose(back.bow_axis.direction, model.bow_axis.direction)
