"""Exception hierarchy shared by every croco module."""


class CrocoError(Exception):
    """Base class for all library errors."""


class ShapeError(CrocoError, ValueError):
    """Array or parameter shapes do not line up."""


class DomainError(CrocoError, ValueError):
    """An argument lies outside the domain of the operation."""


class CapacityError(CrocoError, ValueError):
    """A generator was asked for more distinct items than it can supply."""


class ConfigError(CrocoError, ValueError):
    """A configuration field failed validation.

    ``field`` names the offending key so the CLI can report it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(CrocoError, ValueError):
    """A text file could not be parsed; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class FormatError(ParseError):
    """The file parsed but its contents are inconsistent."""


class HiddenLabelError(CrocoError, PermissionError):
    """A training path tried to read a label that is hidden from training."""


class UndefinedMetricError(CrocoError, ValueError):
    """A metric is undefined for the given input (e.g. AUC with one class)."""


class EvaluationError(CrocoError, ArithmeticError):
    """A loss function returned a non-finite value."""
