"""Exception types shared across the package."""


class DomainError(ValueError):
    """A parameter is outside its mathematical domain (r <= 0, alpha not in (0,2), ...)."""


class KernelContractError(RuntimeError):
    """A kernel evaluator returned a value outside its declared [c_lower, c_upper] bounds."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to converge; carries the last two estimates."""

    def __init__(self, message, estimates=None):
        super().__init__(message)
        self.estimates = estimates


class ConstructionError(RuntimeError):
    """Partition construction failed (bracket failure or unmet mass tolerance)."""


class MarkRangeError(ValueError):
    """A queried mark/displacement lies outside the represented region of a transport map."""


class AxisBoundaryError(ValueError):
    """A queried mark lies exactly on a quadrant boundary axis (measure-zero set)."""


class AccuracyError(RuntimeError):
    """A certified error bound exceeds the requested tolerance; carries the achieved bound."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class GridTooSmallError(RuntimeError):
    """A Fourier grid does not satisfy its decay precondition; carries a suggested half-width."""

    def __init__(self, message, suggested_u_max=None):
        super().__init__(message)
        self.suggested_u_max = suggested_u_max


class ConfigError(ValueError):
    """A run configuration failed schema or domain validation."""
