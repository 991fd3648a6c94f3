"""Exception hierarchy shared by all fwda modules."""


class FwdaError(Exception):
    """Base class; the CLI renders these as exit code 1."""

    def __str__(self):
        msg = super().__str__()
        return f"{type(self).__name__}: {msg}" if msg else type(self).__name__


class ShapeError(FwdaError, ValueError):
    pass


class InsufficientSamples(FwdaError, ValueError):
    pass


class DegenerateCovariance(FwdaError, ValueError):
    pass


class InvalidParameter(FwdaError, ValueError):
    pass


class DomainError(FwdaError, ValueError):
    pass


class NotPositiveDefinite(FwdaError, ValueError):
    pass


class InvalidModel(FwdaError, ValueError):
    pass


class MissingClass(FwdaError, ValueError):
    pass


class ModelFormatError(FwdaError, ValueError):
    def __init__(self, field, reason="missing or invalid"):
        self.field = field
        super().__init__(f"field {field!r}: {reason}")


class CsvShapeError(FwdaError, ValueError):
    def __init__(self, line, expected, got):
        self.line = line
        super().__init__(f"line {line}: expected {expected} columns, got {got}")


class CsvValueError(FwdaError, ValueError):
    def __init__(self, line, column, value):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: cannot parse {value!r}")


class LabelError(FwdaError, ValueError):
    pass


class IoError(FwdaError, OSError):
    pass


class InvalidSpec(FwdaError, ValueError):
    pass


class EmptyInput(FwdaError, ValueError):
    pass
