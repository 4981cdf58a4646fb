"""Model reduction for linear systems with moving loads and sensors."""

from mortv.errors import MorError
from mortv.lti_reduction import KrylovConfig, ReducedModel
from mortv.models import BeamParams, HeatRodParams, beam_system, build_beam, build_heat_rod
from mortv.simulation import SimConfig, SimResult, l2_error, simulate_full, simulate_reduced
from mortv.systems import MovingBoundarySystem, SecondOrderSystem, StateSpaceSystem, Trajectory

__version__ = "0.1.0"

__all__ = [
    "BeamParams",
    "HeatRodParams",
    "KrylovConfig",
    "MorError",
    "MovingBoundarySystem",
    "ReducedModel",
    "SecondOrderSystem",
    "SimConfig",
    "SimResult",
    "StateSpaceSystem",
    "Trajectory",
    "beam_system",
    "build_beam",
    "build_heat_rod",
    "l2_error",
    "simulate_full",
    "simulate_reduced",
]
