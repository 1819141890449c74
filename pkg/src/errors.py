"""
Exception types.

Every error is a ValueError so that boundary code can keep catching
ValueError and turning it into a log line, an exit code or a truncated
record.
"""

from typing import Optional


class ParameterError(ValueError):
    """A physical parameter or parameter file violates its admissible range."""


class QuasiSquareError(ValueError):
    """Dimensions that do not describe a quasi-square."""


class CapacityError(ValueError):
    """A lattice or enumeration exceeds its configured cap."""

    def __init__(self, message: str, cap: Optional[int] = None):
        super().__init__(message)
        self.cap = cap


class MoveError(ValueError):
    """An exchange that is not an occupied-to-empty nearest-neighbour move."""


class SnapshotParseError(ValueError):
    """Malformed snapshot, fixture or trajectory text."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class FrozenStateError(ValueError):
    """Total jump rate is zero: no particle has an empty neighbour."""


class BookkeepingError(ValueError):
    """Sleep bookkeeping saw a particle it does not know."""


class WrapAmbiguityError(ValueError):
    """A set of sites is too wide to be unwrapped unambiguously on the torus."""


class ClassificationError(ValueError):
    """Exit classification requested for a trajectory that never left R."""
