"""Exception types shared across the package."""


class SystemDefinitionError(ValueError):
    """Raised for transfer functions that are unstable or not strictly proper."""


class DomainError(ValueError):
    """Raised when an argument lies outside a function's mathematical domain."""


class DegenerateGridError(ValueError):
    """Raised when a grid maps to coordinate values that are zero or collide.

    The closed-form Gram determinant/inverse require strictly increasing
    positive coordinate values; on a degenerate grid the Gram matrix is
    exactly singular.
    """

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = tuple(indices) if indices is not None else None


class TuningError(RuntimeError):
    """Raised when every optimizer restart fails to produce a finite objective."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
