"""Solver exceptions shared across modules."""


class NonConvergence(RuntimeError):
    """An iterative solve exhausted its iteration budget.

    Carries the last residual norm so callers can report how far the
    solve got before giving up.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularSystem(RuntimeError):
    """A linear system was singular (e.g. rigid-body modes not removed)."""


class ConfigError(ValueError):
    """A configuration document failed validation.

    ``pointer`` is a JSON-pointer-style path to the offending entry.
    """

    def __init__(self, message, pointer=""):
        super().__init__(message)
        self.pointer = pointer
