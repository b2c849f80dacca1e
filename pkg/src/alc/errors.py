"""Exception hierarchy shared across the package."""


class AlcError(Exception):
    """Base class for all package errors."""


class InputError(AlcError, ValueError):
    """Bad user input: malformed files, bad parameters, mismatched data."""


class ColumnCountError(InputError):
    pass


class NumberFormatError(InputError):
    pass


class ParseError(InputError):
    """A data line failed to parse; carries the 1-based line number."""

    def __init__(self, path, lineno, cause):
        self.path = path
        self.lineno = lineno
        self.cause = cause
        super().__init__(f"{path}: line {lineno}: {cause}")


class DomainError(InputError):
    pass


class UnknownActivityError(InputError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ParamError(InputError):
    pass


class EmptySetError(InputError):
    pass


class InsufficientSubjectsError(InputError):
    pass


class ShapeError(AlcError, ValueError):
    pass


class NumericError(AlcError, ArithmeticError):
    pass


class GraphError(AlcError, RuntimeError):
    pass


class LabelRangeError(InputError):
    pass


class SpecError(InputError):
    pass


class DegenerateError(AlcError, ValueError):
    """All paired differences are zero; there is no evidence either way."""

    p_value = 1.0


class KeyMismatchError(InputError):
    pass


class FormatError(InputError):
    """A binary cache or checkpoint file has the wrong magic or is truncated."""
