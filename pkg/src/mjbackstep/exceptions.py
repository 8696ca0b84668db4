"""Exception types raised across the package."""


class ConfigError(ValueError):
    """A scenario document failed to parse or validate.

    ``field`` names the offending key path when known, ``line`` the
    line number of a JSON syntax error.
    """

    def __init__(self, message, field=None, line=None):
        self.reason = message
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class RateBoundError(ValueError):
    """A transition rate is negative or exceeds the declared bound."""


class ConvergenceError(RuntimeError):
    """An iterative procedure did not converge."""


class DivergenceError(RuntimeError):
    """Values left the admissible range (cap exceeded or non-finite)."""


class DomainError(ValueError):
    """A query point lies outside the triangle 0 <= xi <= x <= 1."""


class SchemaError(ValueError):
    """A persisted file does not match the expected layout."""
