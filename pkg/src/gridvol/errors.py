"""Exception hierarchy shared across the library.

Every error raised deliberately by this package derives from
:class:`GridvolError`, so callers can catch one type at the boundary.  The
subclasses draw the lines the numerical code actually needs: bad parameters,
points outside a support, quadrature that failed to converge, price targets
outside the attainable band, malformed inputs, and malformed configuration.
"""

from __future__ import annotations


class GridvolError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(GridvolError, ValueError):
    """A parameter lies outside the admissible domain (e.g. rho >= 0)."""


class SupportError(GridvolError, ValueError):
    """A state value lies outside the support of the relevant density."""


class NumericError(GridvolError, ArithmeticError):
    """A numerical routine failed to reach its tolerance.

    Carries the residual that was actually achieved so callers can decide
    whether to retry with looser settings or abort.
    """

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class BoundsError(GridvolError, ValueError):
    """A requested price target is outside the attainable open interval.

    Carries the interval so the message can quote it.
    """

    def __init__(self, message: str, bounds: tuple[float, float]):
        super().__init__(message)
        self.bounds = bounds


class InputError(GridvolError, ValueError):
    """Sample data handed to a statistical routine is unusable."""


class ConfigError(GridvolError, ValueError):
    """An experiment configuration file or override is malformed."""
