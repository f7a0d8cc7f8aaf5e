"""Exception types shared across the toolkit."""


class InvalidInputError(ValueError):
    """A caller-supplied value violates a documented precondition."""


class InconsistentStateError(RuntimeError):
    """An internal invariant was violated (a bug, not a usage error)."""
