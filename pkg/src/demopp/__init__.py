"""Decoupled-query multi-mode trajectory forecasting, trainable on a CPU.

The package splits motion prediction into directional intention queries and
per-timestep state queries, couples them into hybrid queries for decoding,
exchanges intentions across sliding-window sub-scenes, and refines each
trajectory against nearby scene context. Everything runs on a small
numpy-backed tensor engine with reverse-mode differentiation.
"""

from .estimator import TrajectoryForecaster, check_scenarios
from .model import DecoupledForecaster, ModelConfig
from .scene import AgentTrack, FrameTransform, MapPolyline, Scenario, read_scenarios, write_scenarios
from .synth import synth_generate

__all__ = [
    "TrajectoryForecaster",
    "check_scenarios",
    "DecoupledForecaster",
    "ModelConfig",
    "Scenario",
    "AgentTrack",
    "MapPolyline",
    "FrameTransform",
    "read_scenarios",
    "write_scenarios",
    "synth_generate",
]

__version__ = "0.1.0"
