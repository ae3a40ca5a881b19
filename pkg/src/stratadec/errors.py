"""Exception types shared across the package.

Every error that callers are expected to catch and react to lives here,
so that the CLI can map each one to a stable exit code.
"""

from __future__ import annotations


class StratadecError(Exception):
    """Base class for all package-specific errors."""


class ParseError(StratadecError):
    """Raised when formula text cannot be parsed.

    Carries the character offset of the failure and a human-readable
    description of what was expected there.
    """

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} (at offset {offset})")


class FormulaTypeError(StratadecError):
    """Raised when a typed formula violates the typing discipline.

    Examples: membership between levels that do not differ by exactly
    one, equality between distinct levels, conflicting annotations for
    one bound occurrence, or a free variable where a sentence is
    required.
    """


class InfeasibleLevel(StratadecError):
    """Raised when a requested finite model level cannot be materialized.

    Level sizes grow as an exponential tower, so anything beyond the
    first few levels exceeds any memory budget.  The error reports the
    offending level and the budget that was exceeded.
    """

    def __init__(self, message: str, level: int | None = None):
        self.level = level
        super().__init__(message)


class BoundViolation(StratadecError):
    """Raised when a construction's size preconditions do not hold.

    Used by the embedding builder when the source or target model is
    too small for the guaranteed construction to go through.
    """


class BoundOverflow(StratadecError):
    """Raised when a certified bound is too large to compute exactly.

    Carries a symbolic description of the bound (for example the
    recursion depth reached) so callers can still report something
    meaningful.
    """

    def __init__(self, message: str, symbolic: str = ""):
        self.symbolic = symbolic
        super().__init__(message)


class CrossCheckMismatch(StratadecError):
    """Raised when two independent evaluation routes disagree.

    This is always a bug in one of the routes, never a recoverable
    condition, so it aborts the decision rather than picking a side.
    """
