"""Bow-to-string contact geometry from motion-capture markers.

The played string and the bow hair are each modeled as a 3D line fitted to
their assigned markers. The contact point is the point on the bow line
closest to the string line; its signed coordinate along the bow line
(``raw_param``, meters from the fitted centroid) is mapped to the
normalized bow position through two calibration parameters captured at the
frog and at the tip.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

PARALLEL_TOLERANCE = 1e-6  # radians between line directions
GAP_WARNING = 0.05  # meters between the two lines before contact looks implausible


class OcclusionError(ValueError):
    """Too few visible markers to fit an axis."""


class GeometryError(ValueError):
    """Degenerate line configuration (parallel or zero-length axes)."""


class CalibrationError(ValueError):
    """Frog/tip calibration captures are unusable."""


@dataclass(frozen=True)
class AxisConfig:
    """Which marker labels form each axis.

    Labels are ordered: bow labels run frog to tip, string labels bridge to
    nut. The order fixes the sign of the fitted directions.
    """

    string_labels: tuple[str, ...] = ("v0", "v1")
    bow_labels: tuple[str, ...] = ("b0", "b1", "b2", "b3", "b4")

    def __post_init__(self) -> None:
        if len(self.string_labels) < 2 or len(self.bow_labels) < 2:
            raise ValueError("each axis needs at least 2 configured markers")


@dataclass(frozen=True)
class Line:
    """A 3D line anchored at the fitted centroid with a unit direction."""

    point: tuple[float, float, float]
    direction: tuple[float, float, float]

    def __post_init__(self) -> None:
        d = np.asarray(self.direction, dtype=float)
        norm = float(np.linalg.norm(d))
        if norm == 0.0:
            raise GeometryError("line direction must be non-zero")
        object.__setattr__(self, "point", tuple(float(v) for v in self.point))
        object.__setattr__(self, "direction", tuple(float(v) for v in d / norm))

    def at(self, param: float) -> np.ndarray:
        return np.asarray(self.point) + param * np.asarray(self.direction)


@dataclass(frozen=True)
class InstrumentModel:
    """Calibrated instrument geometry: reference axes plus hair endpoints."""

    string_axis: Line
    bow_axis: Line
    frog_param: float
    tip_param: float
    config: AxisConfig = AxisConfig()

    def __post_init__(self) -> None:
        if self.frog_param == self.tip_param:
            raise ValueError("frog_param and tip_param must differ")


@dataclass(frozen=True)
class ContactSolution:
    """Where the bow hair meets the string, in bow coordinates."""

    position: float  # normalized, clamped to [0, 1]
    gap: float  # meters between the closest points of the two lines
    raw_param: float  # meters along the bow line from its fitted centroid
    warning: str | None = None


def fit_line(points: Sequence[Sequence[float]], orient: Sequence[float]) -> Line:
    """Least-squares line through ``points``, direction aligned with ``orient``.

    For two points this is the exact connecting line; for more, the centroid
    plus the principal direction of the centered coordinates.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 2:
        raise OcclusionError("need at least 2 points to fit a line")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    direction = vt[0]
    if float(np.dot(direction, np.asarray(orient, dtype=float))) < 0.0:
        direction = -direction
    return Line(point=tuple(centroid), direction=tuple(direction))


def fit_axes(
    markers: Mapping[str, Sequence[float]], config: AxisConfig
) -> tuple[Line, Line]:
    """Fit the string and bow lines from one frame's visible markers.

    Raises :class:`OcclusionError` when fewer than 2 configured markers are
    visible on either axis. Directions are oriented by the configured label
    order (first visible toward last visible).
    """

    def fit(labels: tuple[str, ...], name: str) -> Line:
        visible = [label for label in labels if label in markers]
        if len(visible) < 2:
            raise OcclusionError(
                f"{name} axis occluded: {len(visible)} of {len(labels)} markers visible"
            )
        pts = [markers[label] for label in visible]
        orient = np.asarray(markers[visible[-1]], dtype=float) - np.asarray(
            markers[visible[0]], dtype=float
        )
        return fit_line(pts, orient)

    return fit(config.string_labels, "string"), fit(config.bow_labels, "bow")


def closest_params(line_a: Line, line_b: Line) -> tuple[float, float, float]:
    """Parameters of the mutually closest points and their distance.

    Returns ``(param_a, param_b, gap)``. Raises :class:`GeometryError` when
    the lines are parallel within :data:`PARALLEL_TOLERANCE` radians.
    """
    u = np.asarray(line_a.direction)
    v = np.asarray(line_b.direction)
    if float(np.linalg.norm(np.cross(u, v))) < PARALLEL_TOLERANCE:
        raise GeometryError("lines are parallel within tolerance")
    w0 = np.asarray(line_a.point) - np.asarray(line_b.point)
    b = float(np.dot(u, v))
    d = float(np.dot(u, w0))
    e = float(np.dot(v, w0))
    denom = 1.0 - b * b  # unit directions: a = c = 1
    param_a = (b * e - d) / denom
    param_b = (e - b * d) / denom
    gap = float(np.linalg.norm(line_a.at(param_a) - line_b.at(param_b)))
    return param_a, param_b, gap


def contact(
    string_line: Line,
    bow_line: Line,
    model: InstrumentModel,
    gap_warning: float = GAP_WARNING,
) -> ContactSolution:
    """Solve for the bow contact position in one frame.

    ``raw_param`` is the coordinate of the closest point on the bow line;
    the normalized position is its affine image under the frog/tip
    calibration, clamped to [0, 1] (strokes legitimately overshoot the
    marked end regions slightly).
    """
    _, raw_param, gap = closest_params(string_line, bow_line)
    span = model.tip_param - model.frog_param
    position = (raw_param - model.frog_param) / span
    position = min(1.0, max(0.0, position))
    warning = None
    if gap > gap_warning:
        warning = f"contact implausible: gap {gap:.4f} m exceeds {gap_warning} m"
    return ContactSolution(position=position, gap=gap, raw_param=raw_param, warning=warning)


def _raw_params(
    frames: Sequence[Mapping[str, Sequence[float]]], config: AxisConfig
) -> np.ndarray:
    params = []
    for markers in frames:
        string_line, bow_line = fit_axes(markers, config)
        _, raw, _ = closest_params(string_line, bow_line)
        params.append(raw)
    return np.asarray(params, dtype=float)


def calibrate(
    frames_at_frog: Sequence[Mapping[str, Sequence[float]]],
    frames_at_tip: Sequence[Mapping[str, Sequence[float]]],
    config: AxisConfig = AxisConfig(),
) -> tuple[float, float]:
    """Derive (frog_param, tip_param) from captures at the two bow ends.

    Each capture is reduced to the median raw contact parameter. The two
    medians must be well separated (at least 10x the larger within-capture
    spread) and ordered frog-before-tip along the configured bow direction;
    a swap indicates the captures were taken at the wrong ends.
    """
    if not frames_at_frog or not frames_at_tip:
        raise CalibrationError("calibration requires frames at both ends")
    frog_params = _raw_params(frames_at_frog, config)
    tip_params = _raw_params(frames_at_tip, config)
    frog = float(np.median(frog_params))
    tip = float(np.median(tip_params))
    spread = max(
        float(np.std(frog_params)) if len(frog_params) > 1 else 0.0,
        float(np.std(tip_params)) if len(tip_params) > 1 else 0.0,
    )
    if abs(tip - frog) < 10.0 * spread or tip == frog:
        raise CalibrationError(
            f"calibration failed: end captures overlap (medians {frog:.4f}/{tip:.4f}, "
            f"spread {spread:.4f})"
        )
    if frog > tip:
        raise CalibrationError(
            "calibration swapped: frog capture lies beyond the tip capture along the "
            "configured bow direction"
        )
    return frog, tip


def make_position_solver(model: InstrumentModel):
    """Per-frame solver: marker map -> ContactSolution.

    Propagates :class:`OcclusionError` / :class:`GeometryError` so callers
    can mark the sample's position invalid.
    """

    def solve(markers: Mapping[str, Sequence[float]]) -> ContactSolution:
        string_line, bow_line = fit_axes(markers, model.config)
        return contact(string_line, bow_line, model)

    return solve


def save_axis_config(model: InstrumentModel, path: str | Path) -> None:
    """Persist the marker assignment and calibration as key=value text."""
    lines = [
        "#version=1",
        "string_axis=" + ",".join(model.config.string_labels),
        "bow_axis=" + ",".join(model.config.bow_labels),
        f"frog_param={model.frog_param!r}",
        f"tip_param={model.tip_param!r}",
        "string_point=" + ",".join(repr(v) for v in model.string_axis.point),
        "string_direction=" + ",".join(repr(v) for v in model.string_axis.direction),
        "bow_point=" + ",".join(repr(v) for v in model.bow_axis.point),
        "bow_direction=" + ",".join(repr(v) for v in model.bow_axis.direction),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_axis_config(path: str | Path) -> InstrumentModel:
    entries: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        entries[key] = value

    def triple(key: str) -> tuple[float, float, float]:
        x, y, z = (float(v) for v in entries[key].split(","))
        return (x, y, z)

    config = AxisConfig(
        string_labels=tuple(entries["string_axis"].split(",")),
        bow_labels=tuple(entries["bow_axis"].split(",")),
    )
    return InstrumentModel(
        string_axis=Line(triple("string_point"), triple("string_direction")),
        bow_axis=Line(triple("bow_point"), triple("bow_direction")),
        frog_param=float(entries["frog_param"]),
        tip_param=float(entries["tip_param"]),
        config=config,
    )
