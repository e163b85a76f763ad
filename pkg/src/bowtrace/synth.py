"""Synthetic performer traces and marker streams.

Profiles encode, as generative parameters, the behaviors that separate
experienced players from beginners: a guaranteed pressure floor, pressure
retention toward the tip, an extra push at the frog on down-bows, reversal
dwell time (turn sharpness), and a mid-bow speed bulge. Synthetic cohorts
built from jittered copies of these profiles are the reproducible fixtures
for the whole analysis battery; no recorded human data is shipped.

Everything is deterministic given the profile seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import AxisConfig, InstrumentModel, Line
from .ingest import MarkerFrame
from .model import Sample, Trace, TraceMeta

QUANT_STEP = 0.06  # newtons; emulated load-cell resolution
BOOST_SPAN = 0.35  # normalized bow length over which the frog attack decays
NOISE_CLIP = 3.0  # pressure noise is clipped at +-NOISE_CLIP * sigma


@dataclass(frozen=True)
class PerformerProfile:
    base_pressure: float  # newtons
    pressure_floor: float | None  # newtons; generator clamps above it when set
    tip_attenuation: float  # fraction of frog-region pressure retained at tip
    frog_attack_boost: float  # down-bow multiplier at the frog, decaying over BOOST_SPAN
    turn_sharpness: float  # reversal dwell in seconds; smaller = sharper turn
    speed_bulge: float  # mid-bow speed relative to the bow ends
    noise_sigma: float  # newtons
    occlusion_rate: float  # fraction of frames without marker data
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("tip_attenuation", "frog_attack_boost", "speed_bulge"):
            value = getattr(self, name)
            if not (0.0 < value <= 2.0):
                raise ValueError(f"{name} must lie in (0, 2], got {value}")
        if self.base_pressure <= 0.0:
            raise ValueError("base_pressure must be positive")
        if self.turn_sharpness <= 0.0:
            raise ValueError("turn_sharpness must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        if not (0.0 <= self.occlusion_rate < 1.0):
            raise ValueError("occlusion_rate must lie in [0, 1)")


EXPERT = PerformerProfile(
    base_pressure=0.8,
    pressure_floor=0.5,
    tip_attenuation=1.0,
    frog_attack_boost=1.15,
    turn_sharpness=0.05,
    speed_bulge=1.0,
    noise_sigma=0.04,
    occlusion_rate=0.0,
    seed=0,
)

BEGINNER = PerformerProfile(
    base_pressure=0.6,
    pressure_floor=None,
    tip_attenuation=0.6,
    frog_attack_boost=1.0,
    turn_sharpness=0.4,
    speed_bulge=1.4,
    noise_sigma=0.05,
    occlusion_rate=0.02,
    seed=0,
)

BUILTIN_PROFILES = {"expert": EXPERT, "beginner": BEGINNER}


def quantize_pressure(values: np.ndarray, step: float = QUANT_STEP) -> np.ndarray:
    return step * np.rint(values / step)


def _ideal_position(t: np.ndarray, period: float, bulge: float) -> np.ndarray:
    """Triangle wave 0->1->0 starting with a down-bow, speed-warped mid-bow.

    The ramp u -> u - b*sin(2*pi*u)/(2*pi) keeps the endpoints fixed while
    scaling mid-stroke speed by (1+b)/(1-b) relative to the ends.
    """
    b = (bulge - 1.0) / (bulge + 1.0)
    phase = np.mod(t, period) / period
    u = 2.0 * phase
    ramp = np.where(u <= 1.0, u, 2.0 - u)
    return ramp - b * np.sin(2.0 * math.pi * ramp) / (2.0 * math.pi)


def _smoothed_position(
    t: np.ndarray, rate: float, period: float, bulge: float, dwell: float
) -> np.ndarray:
    """Box-filter the ideal triangle so each reversal dwells ~``dwell`` seconds."""
    w = max(1, int(round(dwell * rate)))
    if w % 2 == 0:
        w += 1
    if w == 1:
        return _ideal_position(t, period, bulge)
    half = w // 2
    dt = 1.0 / rate
    pad_t = np.concatenate(
        [t[0] + dt * np.arange(-half, 0), t, t[-1] + dt * np.arange(1, half + 1)]
    )
    # The waveform is symmetric about t=0, so mirroring extends it exactly.
    padded = _ideal_position(np.abs(pad_t), period, bulge)
    kernel = np.ones(w) / w
    return np.convolve(padded, kernel, mode="valid")


def generate_trace(
    profile: PerformerProfile,
    tempo: float = 75.0,
    counts_per_stroke: int = 4,
    duration: float = 25.0,
    rate: float = 60.0,
    participant: str = "synthetic",
    session: str = "",
    trial: int = 0,
) -> Trace:
    """Synthesize one measurement following the metronome protocol.

    Position is a dwell-smoothed triangle wave (down-bow first); pressure is
    the profile's base modulated by the tip-attenuation ramp and the
    down-bow frog attack, plus clipped Gaussian noise, clamped to the floor
    when one is set, and finally quantized to the sensor step.
    """
    if tempo <= 0.0 or duration <= 0.0 or rate <= 0.0:
        raise ValueError("tempo, duration, and rate must be positive")
    rng = np.random.default_rng(profile.seed)
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    stroke_duration = counts_per_stroke * 60.0 / tempo
    period = 2.0 * stroke_duration

    position = _smoothed_position(t, rate, period, profile.speed_bulge, profile.turn_sharpness)
    position = np.clip(position, 0.0, 1.0)
    gradient = np.gradient(position) if n >= 2 else np.zeros(n)
    going_down = np.ones(n, dtype=bool)
    sign = 1
    for i in range(n):
        if gradient[i] > 0:
            sign = 1
        elif gradient[i] < 0:
            sign = -1
        going_down[i] = sign > 0

    attenuation = 1.0 + (profile.tip_attenuation - 1.0) * position
    boost = np.where(
        going_down,
        1.0 + (profile.frog_attack_boost - 1.0) * np.maximum(0.0, 1.0 - position / BOOST_SPAN),
        1.0,
    )
    pressure = profile.base_pressure * attenuation * boost
    if profile.noise_sigma > 0.0:
        noise = rng.normal(0.0, profile.noise_sigma, n)
        limit = NOISE_CLIP * profile.noise_sigma
        pressure = pressure + np.clip(noise, -limit, limit)
    if profile.pressure_floor is not None:
        # Clamp at the lowest sensor-grid value at or above the floor so the
        # subsequent quantization cannot dip below it.
        grid_floor = QUANT_STEP * math.ceil(profile.pressure_floor / QUANT_STEP)
        pressure = np.maximum(pressure, grid_floor)
    pressure = quantize_pressure(pressure)

    occluded = rng.random(n) < profile.occlusion_rate
    samples = []
    for i in range(n):
        if occluded[i]:
            samples.append(Sample(t=float(t[i]), pressure=float(pressure[i])))
        else:
            samples.append(
                Sample(
                    t=float(t[i]),
                    pressure=float(pressure[i]),
                    position=float(position[i]),
                    valid_position=True,
                )
            )
    meta = TraceMeta(participant=participant, session=session, trial=trial, tempo_bpm=tempo)
    return Trace(
        samples=tuple(samples),
        tare_offset=0.0,
        calibration_factor=QUANT_STEP,
        nominal_rate=rate,
        meta=meta,
    )


def default_instrument() -> InstrumentModel:
    """Reference geometry used by the synthetic marker generator.

    The string runs along x; the bow hair line crosses it obliquely through
    the bowing point, so the two lines intersect (gap 0) and the hair
    endpoints sit 0.325 m either side of the marker centroid when the bow is
    centered.
    """
    d = np.array([0.12, 0.92, 0.38])
    d = d / np.linalg.norm(d)
    return InstrumentModel(
        string_axis=Line(point=(0.0, 0.0, 0.0), direction=(1.0, 0.0, 0.0)),
        bow_axis=Line(point=(0.16, 0.0, 0.0), direction=tuple(d)),
        frog_param=-0.325,
        tip_param=0.325,
        config=AxisConfig(),
    )


# Fixed off-axis violin markers (world frame of the default instrument).
_EXTRA_VIOLIN = {
    "v2": np.array([0.05, -0.08, 0.02]),
    "v3": np.array([0.22, -0.06, -0.03]),
    "v4": np.array([0.12, 0.04, -0.05]),
}
_STRING_MARKER_PARAMS = (-0.16, 0.17)  # v0, v1 along the string axis
_BOW_MARKER_FRACTIONS = (-0.5, -0.25, 0.0, 0.25, 0.5)  # of the hair span, about the centroid


def generate_marker_stream(
    trace: Trace,
    model: InstrumentModel | None = None,
    marker_noise: float = 0.0,
    seed: int = 0,
) -> list[MarkerFrame]:
    """Synthesize marker frames consistent with the trace's bow positions.

    The bow slides along its own axis through the fixed contact point, so
    running the geometry pipeline on the output recovers the source
    positions exactly when ``marker_noise`` is zero. Frames for occluded
    samples omit all bow markers (the violin stays visible).
    """
    if model is None:
        model = default_instrument()
    rng = np.random.default_rng(seed)
    u = np.asarray(model.string_axis.direction)
    d = np.asarray(model.bow_axis.direction)
    _, param_b, _ = geometry.closest_params(model.string_axis, model.bow_axis)
    contact_point = model.bow_axis.at(param_b)
    span = model.tip_param - model.frog_param

    string_points = {
        "v0": model.string_axis.at(_STRING_MARKER_PARAMS[0]),
        "v1": model.string_axis.at(_STRING_MARKER_PARAMS[1]),
    }
    violin = {**string_points, **_EXTRA_VIOLIN}

    frames = []
    for sample in trace.samples:
        points = {}
        for label, base in violin.items():
            p = np.array(base, dtype=float)
            if marker_noise > 0.0:
                p = p + rng.normal(0.0, marker_noise, 3)
            points[label] = tuple(p)
        if sample.valid_position:
            raw = model.frog_param + sample.position * span
            # raw is measured from the marker centroid, so the centroid sits
            # at -raw along the hair direction from the contact point.
            centroid = contact_point - raw * d
            for frac, label in zip(_BOW_MARKER_FRACTIONS, ("b0", "b1", "b2", "b3", "b4")):
                p = centroid + frac * span * d
                if marker_noise > 0.0:
                    p = p + rng.normal(0.0, marker_noise, 3)
                points[label] = tuple(p)
        frames.append(MarkerFrame(t_rx=sample.t, points=points))
    return frames


def generate_cohort(
    n_per_group: int = 8,
    profiles: tuple[PerformerProfile, PerformerProfile] = (EXPERT, BEGINNER),
    trials_per_subject: int = 3,
    seed: int = 0,
    tempo: float = 75.0,
    counts_per_stroke: int = 4,
    duration: float = 25.0,
    rate: float = 60.0,
) -> tuple[list[list[Trace]], list[list[Trace]]]:
    """Jittered per-subject copies of the two group profiles.

    Subject-level random effects perturb the profile parameters so that the
    groups have realistic within-group spread (and the rank tests have
    non-degenerate variance). Deterministic given ``seed``.
    """
    if n_per_group < 2:
        raise ValueError("need at least 2 subjects per group")
    master = np.random.default_rng(seed)
    groups: list[list[list[Trace]]] = []
    for g, profile in enumerate(profiles):
        prefix = "E" if g == 0 else "B"
        subjects = []
        for s in range(n_per_group):
            jittered = replace(
                profile,
                base_pressure=profile.base_pressure * (1.0 + master.normal(0.0, 0.06)),
                tip_attenuation=float(
                    np.clip(profile.tip_attenuation + master.normal(0.0, 0.12), 0.05, 2.0)
                ),
                frog_attack_boost=float(
                    np.clip(profile.frog_attack_boost + master.normal(0.0, 0.02), 1.0, 2.0)
                ),
                turn_sharpness=float(
                    np.clip(profile.turn_sharpness * math.exp(master.normal(0.0, 1.0)), 0.02, 1.5)
                ),
                speed_bulge=float(
                    np.clip(profile.speed_bulge + master.normal(0.0, 0.10), 0.5, 1.9)
                ),
            )
            traces = []
            for trial in range(trials_per_subject):
                trial_profile = replace(jittered, seed=int(master.integers(2**31)))
                traces.append(
                    generate_trace(
                        trial_profile,
                        tempo=tempo,
                        counts_per_stroke=counts_per_stroke,
                        duration=duration,
                        rate=rate,
                        participant=f"{prefix}{s:02d}",
                        trial=trial,
                    )
                )
            subjects.append(traces)
        groups.append(subjects)
    return groups[0], groups[1]


def save_profile(profile: PerformerProfile, path: str | Path) -> None:
    lines = ["#version=1"]
    for name in (
        "base_pressure",
        "pressure_floor",
        "tip_attenuation",
        "frog_attack_boost",
        "turn_sharpness",
        "speed_bulge",
        "noise_sigma",
        "occlusion_rate",
        "seed",
    ):
        value = getattr(profile, name)
        lines.append(f"{name}={'' if value is None else repr(value)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_profile(path: str | Path) -> PerformerProfile:
    entries: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        entries[key] = value
    floor = entries.get("pressure_floor", "")
    return PerformerProfile(
        base_pressure=float(entries["base_pressure"]),
        pressure_floor=None if floor == "" else float(floor),
        tip_attenuation=float(entries["tip_attenuation"]),
        frog_attack_boost=float(entries["frog_attack_boost"]),
        turn_sharpness=float(entries["turn_sharpness"]),
        speed_bulge=float(entries["speed_bulge"]),
        noise_sigma=float(entries["noise_sigma"]),
        occlusion_rate=float(entries["occlusion_rate"]),
        seed=int(entries.get("seed", "0")),
    )
