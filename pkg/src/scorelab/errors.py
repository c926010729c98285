"""Exception types shared across the package.

The CLI maps InputError/SpecFileError/UnsupportedError/DomainError to exit
code 1 (usage or configuration problem); verification verdict failures are
not exceptions and exit with code 2.
"""


class InputError(ValueError):
    """Caller passed values outside an operation's precondition."""


class DomainError(InputError):
    """Evaluation requested outside the mathematical domain (e.g. t <= 0)."""


class UnsupportedError(InputError):
    """Requested combination is documented as unsupported (e.g. order > 6)."""


class QuadratureWindowError(RuntimeError):
    """All quadrature mass fell outside the target region.

    Carries the offending truncation window so reports can name it.
    """

    def __init__(self, message, window=None):
        super().__init__(message)
        self.window = window


class SpecFileError(InputError):
    """Density/schedule specification file failed to parse or validate."""

    def __init__(self, message, key=None, line=None):
        loc = []
        if key is not None:
            loc.append(f"key '{key}'")
        if line is not None:
            loc.append(f"line {line}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.key = key
        self.line = line
