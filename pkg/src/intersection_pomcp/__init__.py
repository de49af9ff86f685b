"""Intersection crossing under uncertainty: IMM belief tracking and POMCP planning."""

from .layout import IntersectionLayout, Turn
from .model import ACTIONS, AccelAction, BehaviorMode, ModelConfig, RewardConfig, VehicleState
from .pomcp import SolverConfig
from .sim import IdmParams, SimConfig

__all__ = [
    "ACTIONS", "AccelAction", "BehaviorMode", "IdmParams", "IntersectionLayout", "ModelConfig",
    "RewardConfig", "SimConfig", "SolverConfig", "Turn", "VehicleState",
]
