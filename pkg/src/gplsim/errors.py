"""Exception hierarchy shared across the package."""


class GplsimError(Exception):
    """Base class for all package errors."""


class DomainError(GplsimError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(GplsimError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(GplsimError, ArithmeticError):
    """A factorization or solve failed on numerically valid input."""


class SingularDesign(NumericalError):
    """The inner normal matrix stayed singular after the ridge guard."""


class SingularBread(NumericalError):
    """The sandwich bread matrix is too ill-conditioned to invert."""


class NonConvergence(GplsimError, RuntimeError):
    """An iterative solver hit its iteration limit."""


class BracketFailure(GplsimError, RuntimeError):
    """Profile interval search found no crossing on one or both sides.

    ``lo``/``hi`` hold the interval found so far; the unbounded side is
    reported as an infinity.
    """

    def __init__(self, message, lo=float("-inf"), hi=float("inf")):
        super().__init__(message)
        self.lo = lo
        self.hi = hi


class TooManyFailures(GplsimError, RuntimeError):
    """Too many bootstrap or Monte Carlo replicates failed."""


class ParseError(GplsimError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(GplsimError, ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing required columns: " + ", ".join(self.missing))


class DuplicateVisit(GplsimError, ValueError):
    """The same (subject_id, visit) pair appears more than once."""
