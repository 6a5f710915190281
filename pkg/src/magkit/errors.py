"""Exception types shared across magkit."""


class MagkitError(Exception):
    """Base class for magkit errors."""


class ValidationError(MagkitError, ValueError):
    """Bad input: wrong shapes, out-of-range parameters, malformed config."""


class CapabilityError(MagkitError):
    """Request exceeds what the implementation supports (e.g. k > k_max)."""


class NumericFailure(MagkitError, ArithmeticError):
    """A computation produced non-finite values."""


class InvariantError(MagkitError, AssertionError):
    """A checked invariant was violated at run time."""
