"""Exception hierarchy shared by all stages."""


class LsirmNsError(Exception):
    """Base class for every error raised by this package."""


class ParseError(LsirmNsError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ConflictError(ParseError):
    """Duplicate (respondent, item) pair in a long-format file."""


class ConfigError(LsirmNsError, ValueError):
    pass


class ContractError(LsirmNsError, ValueError):
    """A caller violated an operation's precondition."""


class DegeneracyError(ContractError):
    pass


class InitializationError(LsirmNsError, RuntimeError):
    pass


class SelectionError(LsirmNsError, RuntimeError):
    pass


class AdjustmentError(LsirmNsError, RuntimeError):
    pass


class LabelingError(LsirmNsError, ValueError):
    pass
