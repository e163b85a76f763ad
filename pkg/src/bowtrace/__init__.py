"""Violin bowing telemetry and practice feedback."""

from .analytics import (
    RegionConfig,
    RegionSummary,
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
from .geometry import AxisConfig, ContactSolution, InstrumentModel, Line, calibrate, contact, fit_axes
from .ingest import MarkerFrame, PressureFrame, TareState, capture_tare, decode_pressure, fuse
from .kinematics import RoundTrip, Stroke, TurnPoint, curvature_at, detect_turns, segment, speed
from .model import Sample, Session, Trace, TraceMeta
from .recording import read_recording, read_session, write_recording, write_session
from .service import SessionEngine, replay_session, run_session, serve
from .stats import (
    BoxSummary,
    TestResult,
    bonferroni,
    box_summary,
    brunner_munzel,
    wilcoxon_signed_rank,
)
from .synth import BEGINNER, EXPERT, PerformerProfile, generate_cohort, generate_marker_stream, generate_trace

__version__ = "0.1.0"
