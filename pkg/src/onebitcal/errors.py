"""Exception types raised by the calibration routines."""


class CalibrationError(ValueError):
    """Base class for all errors raised by :mod:`onebitcal`."""


class ModelDomainError(CalibrationError):
    """A parameter vector maps outside the arcsine domain (or has a bad gain).

    Iterative solvers catch this and shorten their step.
    """


class NotPositiveDefiniteError(CalibrationError):
    pass


class DerivativeSingularityError(CalibrationError):
    pass


class InsufficientSupportError(CalibrationError):
    pass


class ConfigError(CalibrationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
