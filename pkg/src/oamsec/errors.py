"""Exception hierarchy shared by all oamsec modules.

Every error raised on a bad input or a bad solver state derives from
:class:`OamsecError`, so callers (and the CLI) can distinguish domain
failures from genuine bugs with a single ``except`` clause.
"""

from __future__ import annotations


class OamsecError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(OamsecError, ValueError):
    """An argument is non-finite, empty, or outside its documented domain."""


class SingularityError(OamsecError):
    """A regression or decomposition input is degenerate (zero variance, empty)."""


class NoInstrumentError(OamsecError):
    """All instrument effects are zero; the ratio estimator is undefined."""


class UnderdeterminedError(OamsecError):
    """Fewer data points than parameters in a weighted least-squares fit."""


class DegenerateScaleError(OamsecError, ValueError):
    """A change-of-variables scale factor is zero."""


class AliasingError(OamsecError, ValueError):
    """A ring sampling count is below the Nyquist bound for the mode set."""


class StabilityError(OamsecError):
    """An explicit time step violates its CFL condition, or a point-process
    model is non-stationary.

    ``suggested_dt`` carries a step size that would satisfy the condition,
    when one is known.
    """

    def __init__(self, message: str, suggested_dt: float | None = None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ConfigurationError(OamsecError):
    """Options are inconsistent (e.g. a mode that needs state not supplied)."""


class StateError(OamsecError):
    """An operation was called on an unsolved or unconverged object."""


class ExtrapolationError(OamsecError, ValueError):
    """A trajectory leaves the grid on which a field is defined."""
