"""Exception hierarchy shared across the package."""


class PropsenseError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PropsenseError):
    """An input violates a documented precondition."""


class MeshError(ValidationError):
    """Invalid mesh topology or geometry."""


class ParseError(PropsenseError):
    """Malformed input file. Carries path and line context when known."""

    def __init__(self, message: str, path=None, line=None):
        self.path = str(path) if path is not None else None
        self.line = line
        ctx = []
        if self.path is not None:
            ctx.append(self.path)
        if line is not None:
            ctx.append(f"line {line}")
        if ctx:
            message = f"{': '.join(ctx)}: {message}"
        super().__init__(message)


class NumericalError(PropsenseError):
    """Numerical failure inside a solver (singular system, non-finite energy)."""
