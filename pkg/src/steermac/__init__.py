"""Steering-vector multiaccess: simulator, root-MUSIC decoder and experiment harness."""

from .airsim import (
    DEFAULT_PREAMBLE,
    MODES,
    ReceivedMatrix,
    Scenario,
    SteeringAssignment,
    TransmitterSpec,
    make_equally_spaced_assignment,
    random_scenario,
    run_until,
    simulate_slot,
)
from .algebra import SubspaceSplit, make_steering_vector, shift, svd_split
from .decoder import DecodeResult, TransmitterMatch, full_decode, music_polynomial, solve_polynomial
from .errors import AmbiguityError, IdentificationError, SteermacError

__version__ = "0.1.0"
