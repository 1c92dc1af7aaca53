"""Simulation of daisy-chained two-socket charging adapters."""

from .discovery import DiscoveryConfig, LengthEstimate, brute_force_draw_frequency, run_discovery, sample_socket
from .electrical import NoiseModel, propagate_current
from .engine import SimConfig, Simulator, run_slots
from .policy import EqualCharge, FcfsWaterFilling, IirState, PriorityWeighted, steady_state_p, update_p
from .scenario import load_scenario, parse_scenario
from .topology import ChainNetwork, ChargePoint, linear_chain, measured_chain

__version__ = "0.1.0"

__all__ = [
    "ChainNetwork",
    "ChargePoint",
    "DiscoveryConfig",
    "EqualCharge",
    "FcfsWaterFilling",
    "IirState",
    "LengthEstimate",
    "NoiseModel",
    "PriorityWeighted",
    "SimConfig",
    "Simulator",
    "brute_force_draw_frequency",
    "linear_chain",
    "load_scenario",
    "measured_chain",
    "parse_scenario",
    "propagate_current",
    "run_discovery",
    "run_slots",
    "sample_socket",
    "steady_state_p",
    "update_p",
]
