"""Latency compensation for networked interactive simulation.

The server extrapolates each client's future hand state from its recent
samples and simulates against the prediction, so round-tripped results land
in sync with what the client is doing right now. This package provides the
predictors, a deterministic network simulator with a synthetic motion rig,
the error metrics, and a live WebSocket demo service.
"""

from .metrics import ErrorSeries, SummaryStats, frame_error, min_dist_error, reduction_factor
from .netsim import LatencyModel, SessionConfig, SessionLog, run_session
from .predict import (
    DeadReckoning,
    Lagrange,
    NoPrediction,
    PolyRegression,
    RegressionSpec,
    Recurrent,
    poly,
)
from .trace import MotionProfile, NoiseModel, TrackedFrame, default_template, gen_trace

__all__ = [
    "ErrorSeries",
    "SummaryStats",
    "frame_error",
    "min_dist_error",
    "reduction_factor",
    "LatencyModel",
    "SessionConfig",
    "SessionLog",
    "run_session",
    "DeadReckoning",
    "Lagrange",
    "NoPrediction",
    "PolyRegression",
    "RegressionSpec",
    "Recurrent",
    "poly",
    "MotionProfile",
    "NoiseModel",
    "TrackedFrame",
    "default_template",
    "gen_trace",
]

__version__ = "0.1.0"
