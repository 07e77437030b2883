"""Sliced vehicular downlink simulator with learned beam lookahead.

Two traffic classes share an OFDMA downlink from roadside units: latency
critical reporters with a statistical reliability budget, and broadband
users whose beams can be steered either from fresh channel knowledge or
from a neural predictor fed by the reporters' quantized angular feeds.
"""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, DomainError
from .scenario import ScenarioConfig, Slice, build_scenario, substream
from .sim import Engine
from .infer import MlpModel, MlpPredictor, OracleBeamPredictor
from .analysis import MetricsSummary, aggregate

__all__ = [
    "__version__",
    "ConfigError", "ContractError", "DomainError",
    "ScenarioConfig", "Slice", "build_scenario", "substream",
    "Engine",
    "MlpModel", "MlpPredictor", "OracleBeamPredictor",
    "MetricsSummary", "aggregate",
]
