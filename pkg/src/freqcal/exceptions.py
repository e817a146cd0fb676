"""Exception and warning classes shared across the package."""


class CalibrationError(Exception):
    """Base class for errors raised by freqcal."""


class DataError(CalibrationError, ValueError):
    """Invalid or inconsistent input data, parameter spaces or configs."""


class NumericalFailure(CalibrationError, ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


class ClippedInputWarning(UserWarning):
    """Inputs fell outside their declared bounds and were clipped."""


class ConvergenceWarning(UserWarning):
    """An iterative routine stopped before meeting its tolerance."""
