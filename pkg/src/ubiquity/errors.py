"""Exception types shared by every module.

The CLI maps ``DomainError`` and ``ResolutionError`` to exit code 2 or 3
(see ``ubiquity.cli``); everything else is a bug.
"""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ResolutionError(ValueError):
    """Request finer than the stored or configured depth."""


class ResourceError(RuntimeError):
    """A configured point/memory budget would be exceeded."""


class ConstructionError(RuntimeError):
    """A construction could not satisfy its own certificates."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
