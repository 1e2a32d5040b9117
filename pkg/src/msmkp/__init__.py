"""Hysteresis modelling and two-degree-of-freedom control of a
magnetic-shape-memory actuator."""

__version__ = "0.1.0"

from .compensator import Compensator, run_compensation
from .config import ConfigError
from .feedback import PiController, open_loop, stability_margins
from .hysteresis import KpModel, KpOperator
from .lti import TransferFunction, discretize, lowpass_filter, plant_identified
from .simulate import ReferenceSpec, ScenarioConfig, run_scenario
from .timeseries import TimeSeries

__all__ = [
    "Compensator", "ConfigError", "KpModel", "KpOperator", "PiController", "ReferenceSpec",
    "ScenarioConfig", "TimeSeries", "TransferFunction", "discretize", "lowpass_filter",
    "open_loop", "plant_identified", "run_compensation", "run_scenario", "stability_margins",
]
