"""Simulation and analysis of networked control loops under dynamic masking."""

from .lti import (
    FrequencyResponse,
    StateSpace,
    TransferFunction,
    ZeroData,
    frequency_grid,
    frequency_response,
    invariant_zeros,
    is_minimal,
    is_stable,
    simulate,
    ss_to_tf,
    tf_to_ss,
)
from .design import pole_placement_controller, shift_zeros
from .loop import (
    DetectorReport,
    LoopSystems,
    LoopTrace,
    build_loop,
    detect,
    performance_energy,
    run,
)

__all__ = [
    "FrequencyResponse",
    "StateSpace",
    "TransferFunction",
    "ZeroData",
    "frequency_grid",
    "frequency_response",
    "invariant_zeros",
    "is_minimal",
    "is_stable",
    "simulate",
    "ss_to_tf",
    "tf_to_ss",
    "pole_placement_controller",
    "shift_zeros",
    "DetectorReport",
    "LoopSystems",
    "LoopTrace",
    "build_loop",
    "detect",
    "performance_energy",
    "run",
]

__version__ = "0.1.0"
