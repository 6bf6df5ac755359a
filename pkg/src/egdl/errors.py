"""Exception hierarchy shared across the package."""


class EgdlError(Exception):
    """Base class for all package errors."""


# graph
class GraphError(EgdlError):
    pass


class SelfLoop(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class IndexOutOfRange(GraphError):
    pass


class Disconnected(GraphError):
    pass


class ParseError(EgdlError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LengthMismatch(EgdlError, ValueError):
    pass


class ShapeMismatch(EgdlError, ValueError):
    pass


# numerics
class NumericError(EgdlError):
    """Raised for failures of a numerical procedure (exit code 3 in the CLI)."""


class DegenerateParams(NumericError, ValueError):
    pass


class NonFiniteState(NumericError):
    pass


class NegativeStateBeyondTolerance(NumericError):
    pass


class SimulationFailure(NumericError):
    pass


class AllProposalsRejected(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class SingularSystem(NumericError):
    pass


class ZeroDenominator(NumericError, ZeroDivisionError):
    pass


# data / protocol
class DataError(EgdlError):
    pass


class OutOfRange(DataError, ValueError):
    pass


class TooFewDraws(DataError, ValueError):
    pass


class SpecTooLarge(DataError, ValueError):
    pass


class CoverageGap(DataError, ValueError):
    pass


class InsufficientHistory(DataError, ValueError):
    pass


class CalibrationTooSmall(DataError, ValueError):
    pass


class RaggedPanel(DataError, ParseError):
    pass


class NegativeValue(DataError, ValueError):
    pass


class ShapeError(ShapeMismatch):
    pass
