"""Fault detection and estimation with disturbance-decoupled functional observers."""
from .errors import (DimensionError, DivergedSimulation, EvaluationError, InvalidMatrix, InvalidSpec,
                     InvalidState, NoConvergence, NoSolution, ResidgenError, UnsupportedOrder)
from .exo import ExoSystem, exo_state, fault_signal, make_custom, make_ramp, make_sine, make_step
from .plant import Channel, ExtendedSystem, LinearPlant, NonlinearPlant, extend, lift_linear
from .lie import LieEngine
from .synthesis import (ParitySolution, ResidualGenerator, build_observer, build_observer_injection,
                        build_tmap, solve_parity_linear)
from .checks import check_decoupling, check_existence, check_manifold, check_special_cases
from .simulation import (DetectionRule, DisturbanceSignal, FaultEvent, FaultSchedule, SimConfig,
                         analytic_error, decoupling_probe, run_bank, simulate_cascade)

__all__ = [
    "DimensionError", "DivergedSimulation", "EvaluationError", "InvalidMatrix", "InvalidSpec", "InvalidState",
    "NoConvergence", "NoSolution", "ResidgenError", "UnsupportedOrder",
    "ExoSystem", "exo_state", "fault_signal", "make_custom", "make_ramp", "make_sine", "make_step",
    "Channel", "ExtendedSystem", "LinearPlant", "NonlinearPlant", "extend", "lift_linear", "LieEngine",
    "ParitySolution", "ResidualGenerator", "build_observer", "build_observer_injection", "build_tmap",
    "solve_parity_linear", "check_decoupling", "check_existence", "check_manifold", "check_special_cases",
    "DetectionRule", "DisturbanceSignal", "FaultEvent", "FaultSchedule", "SimConfig", "analytic_error",
    "decoupling_probe", "run_bank", "simulate_cascade",
]
__version__ = "0.1.0"
