"""Exception and warning types raised by svarwb."""


class SvarwbError(Exception):
    """Base class for all library errors."""


class SingularA0(SvarwbError, ValueError):
    pass


class NotPositiveDefinite(SvarwbError, ValueError):
    pass


class NonStationary(SvarwbError, ValueError):
    pass


class ZeroVariance(SvarwbError, ValueError):
    pass


class RankDeficientR(SvarwbError, ValueError):
    pass


class IndexOutOfRange(SvarwbError, IndexError):
    pass


class InadmissibleTransform(SvarwbError, ValueError):
    pass


class NormalizationUndefined(SvarwbError, ValueError):
    pass


class RecursiveSchemeUnavailable(SvarwbError):
    pass


class SolverBudgetExhausted(SvarwbError):
    def __init__(self, message, starts=0, residual_histogram=None):
        super().__init__(message)
        self.starts = starts
        self.residual_histogram = residual_histogram


class NotSquareSystem(SvarwbError):
    pass


class RecursivePatternViolated(SvarwbError):
    pass


class DegenerateNullSpace(SvarwbError):
    pass


class OrderingNotFound(SvarwbError):
    pass


class InsufficientObservations(SvarwbError, ValueError):
    pass


class NonPositiveScale(SvarwbError, ValueError):
    pass


class AllDrawsInadmissible(SvarwbError):
    pass


class EmptyRetention(SvarwbError, ValueError):
    pass


class ConfigError(SvarwbError, ValueError):
    pass


class NonStationaryWarning(UserWarning):
    pass


class NonStationaryDGP(NonStationaryWarning):
    pass
