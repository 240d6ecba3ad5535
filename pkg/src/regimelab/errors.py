"""Exception hierarchy.

Each class carries the CLI exit code it maps to, so the command-line front
end can translate library failures without a lookup table.
"""


class RegimeLabError(Exception):
    exit_code = 1


class ParameterError(RegimeLabError, ValueError):
    """Invalid model, fit or analytics parameter."""

    exit_code = 2


class DomainError(RegimeLabError, ValueError):
    """Non-finite input where a finite real is required."""

    exit_code = 2


class KinkError(RegimeLabError, ValueError):
    """Finite differences requested across the non-differentiable point of |gap|."""

    exit_code = 2


class ShapeError(RegimeLabError, ValueError):
    exit_code = 2


class CorpusError(RegimeLabError, ValueError):
    exit_code = 3


class CorpusParseError(CorpusError):
    pass


class SchemaError(CorpusError):
    def __init__(self, message, turn=None):
        super().__init__(message)
        self.turn = turn


class OrderError(CorpusError):
    pass


class CalibrationUnavailableError(RegimeLabError):
    exit_code = 4


class NumericError(RegimeLabError, ArithmeticError):
    exit_code = 5

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
