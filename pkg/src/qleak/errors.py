"""Exception hierarchy shared across the package."""

from __future__ import annotations


class QleakError(Exception):
    """Base class for all package errors."""


class UnknownLabel(QleakError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else "unknown label"


class LayoutMismatch(QleakError, ValueError):
    pass


class DimensionOverflow(QleakError, ValueError):
    pass


class InvalidState(QleakError, ValueError):
    pass


class WeightMismatch(QleakError, ValueError):
    pass


class BadCut(QleakError, ValueError):
    pass


class DimMismatch(QleakError, ValueError):
    pass


class NotCPTP(QleakError, ValueError):
    pass


class NotClassicalControl(QleakError, ValueError):
    pass


class BlockLeakage(QleakError, ValueError):
    pass


class UnknownGate(QleakError, ValueError):
    pass


class BadPartition(QleakError, ValueError):
    pass


class SolverDiverged(QleakError, RuntimeError):
    pass


class BadDistribution(QleakError, ValueError):
    pass


class NotCQ(QleakError, ValueError):
    pass


class ParseError(QleakError, ValueError):
    """Syntax error in a protocol source, positioned at ``line``/``column``."""

    def __init__(self, message: str, line: int = 0, column: int = 1):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"{line}:{column}: {message}" if line else message)


class ValidationError(ParseError):
    pass


class BadRound(QleakError, ValueError):
    pass


class NotUnitaryProtocol(QleakError, ValueError):
    pass


class NotClassicallyControlled(QleakError, ValueError):
    pass


class HypothesisViolated(QleakError, ValueError):
    pass


class BadDims(QleakError, ValueError):
    pass
