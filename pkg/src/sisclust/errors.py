"""Exception hierarchy shared by all sisclust modules.

Each class maps to one CLI exit code so failures stay machine-readable:
validation/parse -> 2, subcritical -> 3, numerical -> 4, capacity -> 5.
"""


class SisclustError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(SisclustError):
    """Invalid input values, shapes, or flags."""

    exit_code = 2


class ParseError(ValidationError):
    """Malformed record in a text input file (reports the line number)."""

    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class SubcriticalError(SisclustError):
    """The epidemic dies out: no metastable regime to sample or tune against."""

    exit_code = 3


class NumericalError(SisclustError):
    """An iterative solver failed to converge or produced an unusable result."""

    exit_code = 4


class GenerationError(NumericalError):
    """Random-network generation exhausted its resampling budget."""


class TuningError(NumericalError):
    """Parameter search could not bracket or reach its target."""


class CapacityError(SisclustError):
    """Problem size exceeds a documented capacity bound for this operation."""

    exit_code = 5
