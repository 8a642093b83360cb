"""Exception hierarchy for redistribution synthesis."""


class RedistError(Exception):
    """Base class for all redistill errors."""


class ParseError(RedistError):
    """Syntax error in the mesh / distributed-type text grammar."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class WellFormednessError(RedistError):
    """A mesh or distributed type violates a well-formedness rule."""


class PreconditionViolation(RedistError):
    """A collective operation was applied where one of its premises fails."""


class InvalidRedistribution(RedistError):
    """Source and target types do not describe the same global array."""


class PatternMismatch(RedistError):
    """A rewrite was requested on a fragment that does not match its pattern."""


class NonTermination(RedistError):
    """The rewrite driver exhausted its budget; indicates a driver bug."""


class Divergence(RedistError):
    """Simulated execution departed from the claimed device assignment."""


class SearchError(RedistError):
    """Internal shortest-path failure; cannot happen on valid, bounded problems."""
