"""Deterministic DLO assembly toolkit: bin-picking singulation, visual-tactile
shape tracking, inter-robot handover, and fixture mounting, together with a
synthetic scene simulator and batch experiment drivers."""

from .errors import (ConfigError, DloError, NoCandidate, NoTopLayer,
                     OffsetTooLarge, PlanFailure, ProtocolError, TrackingLost)
from .geometry import Polyline3D, Pose
from .scene import DloSpec, Scene, SensorNoise, gen_bin
from .sim import Simulator

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DloError", "DloSpec", "NoCandidate", "NoTopLayer",
    "OffsetTooLarge", "PlanFailure", "Polyline3D", "Pose", "ProtocolError",
    "Scene", "SensorNoise", "Simulator", "TrackingLost", "gen_bin",
    "__version__",
]
