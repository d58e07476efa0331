"""Graded red-light braking advisories from macroscopic traffic estimation
and receding-horizon optimization, with a microscopic validation simulator."""

from .advisory import MpcConfig, SignalTimeline, WarningSignal, baseline_warning
from .engine import AdvisorySession, EngineConfig
from .estimation import UkfConfig
from .sim import IdmParams, RunMetrics, ScenarioConfig, run_scenario
from .traffic_flow import FlowParams

__all__ = [
    "AdvisorySession",
    "EngineConfig",
    "FlowParams",
    "IdmParams",
    "MpcConfig",
    "RunMetrics",
    "ScenarioConfig",
    "SignalTimeline",
    "UkfConfig",
    "WarningSignal",
    "baseline_warning",
    "run_scenario",
]

__version__ = "0.1.0"
