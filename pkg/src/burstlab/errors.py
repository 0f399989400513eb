"""Exception hierarchy. Everything raised on bad input derives from ``BurstlabError``."""


class BurstlabError(Exception):
    pass


class ShapeError(BurstlabError, ValueError):
    pass


class DimensionError(ShapeError):
    """Image dimensions violate a divisibility or parity requirement."""


class ParameterError(BurstlabError, ValueError):
    pass


class InvertibilityError(BurstlabError, ValueError):
    pass


class TrajectoryFormatError(BurstlabError, ValueError):
    pass


class ReferenceFrameError(TrajectoryFormatError):
    """First trajectory matrix is not the identity."""


class FlatImageError(BurstlabError, ValueError):
    pass


class OracleScaleError(BurstlabError, ValueError):
    pass


class UnsupportedOperatorError(BurstlabError, ValueError):
    pass


class TimestepError(BurstlabError, ValueError):
    pass


class WeightOverflowError(BurstlabError, ArithmeticError):
    pass


class InsufficientCoverageError(BurstlabError, ValueError):
    pass


class ConfigError(BurstlabError, ValueError):
    pass


class DataError(BurstlabError, IOError):
    pass


class DivergenceError(BurstlabError, ArithmeticError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
