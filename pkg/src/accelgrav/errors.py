"""Exception types raised across the package."""


class AccelGravError(Exception):
    """Base class for all package errors."""


class AntipodeError(AccelGravError, ValueError):
    """A point on S^2 is too close to the antipode of the chart origin."""


class CoverageError(AccelGravError, ValueError):
    """Accelerometer samples do not span the requested pose interval."""


class NonPSDError(AccelGravError, ValueError):
    """A covariance matrix is not symmetric positive semi-definite."""


class RankDeficientError(AccelGravError, ArithmeticError):
    """The (damped) normal equations are numerically singular."""


class ConfigError(AccelGravError, ValueError):
    """Invalid estimator or scenario configuration."""


class NonMonotonicTimeError(AccelGravError, ValueError):
    """A measurement arrived with a timestamp earlier than its predecessor."""


class DataError(AccelGravError, ValueError):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
