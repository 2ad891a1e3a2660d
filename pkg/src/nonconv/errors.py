"""Exception hierarchy shared across the package."""


class NonconvError(Exception):
    """Base class for all package-specific failures."""


class ValidationError(NonconvError, ValueError):
    """Malformed input: bad shapes, weights that do not sum to one, etc."""


class WrongK(ValidationError):
    """An operation was asked to run with an incompatible progression order."""


class NotErgodic(NonconvError):
    """The transition matrix is not irreducible and aperiodic."""


class NotIrreducible(NonconvError):
    """The nonnegative matrix has a reducible positivity pattern."""


class NotPrimitive(NonconvError):
    """The 0/1 transition structure admits no all-positive power."""


class NoDoeblinWithinHorizon(NonconvError):
    """No power of the transition matrix up to the horizon admits a
    two-sided minorization/majorization by a single probability vector."""


class TooLarge(NonconvError):
    """A policy cap on problem size was exceeded."""


class HorizonOverflow(TooLarge):
    """The sampling horizon needs more memory than the configured cap."""


class StepUnstable(NonconvError):
    """The ODE integrator's local error estimate exceeded its tolerance."""


class Degenerate(NonconvError):
    """Every per-level second moment vanishes; the variance constant is 0."""


class NonConvergence(NonconvError):
    """An iterative solver hit its iteration cap without stagnating."""
