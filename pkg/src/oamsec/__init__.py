"""Secure-gain estimation toolkit.

Pipelines for causal gain estimation over randomized mode designs, the
coupled mean-field control system that governs the population of
transmitters, self-exciting adversary activity with its extinction
calculus, and closed-form convergence bounds tying the pieces together.
"""

__version__ = "0.1.0"

from .errors import (
    AliasingError,
    ConfigurationError,
    DegenerateScaleError,
    ExtrapolationError,
    InvalidInputError,
    NoInstrumentError,
    OamsecError,
    SingularityError,
    StabilityError,
    StateError,
    UnderdeterminedError,
)

__all__ = [
    "__version__",
    "OamsecError",
    "InvalidInputError",
    "SingularityError",
    "NoInstrumentError",
    "UnderdeterminedError",
    "DegenerateScaleError",
    "AliasingError",
    "StabilityError",
    "ConfigurationError",
    "StateError",
    "ExtrapolationError",
]
