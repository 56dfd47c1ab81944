"""Desk-scale MU-MIMO downlink simulator with heuristic and deep radio schedulers."""

from .config import ConfigError, EvalConfig, RunConfig, SimConfig, TrainConfig, load_config
from .simenv import AllocationGrid, Simulator, init_sim

__all__ = ["AllocationGrid", "ConfigError", "EvalConfig", "RunConfig", "SimConfig",
           "Simulator", "TrainConfig", "init_sim", "load_config"]
__version__ = "0.1.0"
