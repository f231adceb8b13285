class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


class PreconditionError(ValueError):
    """Raised when an operation's precondition does not hold."""


class ParseError(ValueError):
    """Raised for malformed CSV or JSON input. Carries the location."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class SelectionError(RuntimeError):
    """Raised when automatic lambda selection exhausts its schedule."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
