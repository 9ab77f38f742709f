"""Exception hierarchy shared by every module."""


class ModelAveragingError(Exception):
    """Base class for all errors raised by :mod:`ridgema`."""


class DimensionMismatch(ModelAveragingError, ValueError):
    pass


class SingularDesign(ModelAveragingError):
    """X_m'X_m is numerically singular for some candidate model."""

    def __init__(self, message, model_index=None):
        super().__init__(message)
        self.model_index = model_index


class LeverageOverflow(ModelAveragingError):
    """A hat-matrix diagonal is numerically 1, so the leave-one-out scaling blows up."""

    def __init__(self, message, model_index=None):
        super().__init__(message)
        self.model_index = model_index


class DegenerateVariance(ModelAveragingError):
    pass


class SingularGram(ModelAveragingError):
    pass


class NotPSD(ModelAveragingError, ValueError):
    pass


class NonConvergence(ModelAveragingError):
    pass


class GCVDenominatorVanishes(ModelAveragingError):
    pass


class DegenerateRSS(ModelAveragingError):
    pass


class SingularMoment(ModelAveragingError):
    pass


class BenchmarkAborted(ModelAveragingError):
    """Too many replications failed."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class ParseError(ModelAveragingError, ValueError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class MissingResponse(ModelAveragingError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing response column"


class ConstantColumn(ModelAveragingError, ValueError):
    pass
