"""Exception hierarchy shared by all modules."""


class DqStabError(Exception):
    """Base class for every error raised by this package."""


class InvalidRange(DqStabError, ValueError):
    pass


class ParseError(DqStabError, ValueError):
    pass


class InvariantViolation(DqStabError, ValueError):
    pass


class InsufficientPoints(DqStabError, ValueError):
    pass


class IllConditioned(DqStabError, ArithmeticError):
    pass


class Singularity(DqStabError, ArithmeticError):
    """A transfer-function denominator vanished (below the guard threshold)."""


class PoleOnAxis(Singularity):
    pass


class NoCrossing(DqStabError, ValueError):
    pass


class GridMismatch(DqStabError, ValueError):
    pass


class BaseMismatch(DqStabError, ValueError):
    pass


class ClosureViolation(DqStabError, ValueError):
    """An eigen-locus does not start/end inside the unit circle."""


class PassesThroughMinusOne(DqStabError, ValueError):
    pass


class RepeatedEigenvalue(DqStabError, ArithmeticError):
    pass


class NumericalFailure(DqStabError, ArithmeticError):
    pass


class InvalidOperatingPoint(DqStabError, ValueError):
    pass


class DegenerateJacobian(DqStabError, ArithmeticError):
    pass
