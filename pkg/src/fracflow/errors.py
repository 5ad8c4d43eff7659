"""Exception hierarchy. Every error carries a short machine-readable ``code``."""


class FracFlowError(Exception):
    code = "error"


class DomainEmptyError(FracFlowError, ValueError):
    code = "domain-empty"


class ParameterRangeError(FracFlowError, ValueError):
    code = "parameter-out-of-range"


class IndexRangeError(FracFlowError, IndexError):
    code = "index-out-of-range"


class ZeroFieldError(FracFlowError, ZeroDivisionError):
    code = "zero-field"


class GridMismatchError(FracFlowError, ValueError):
    code = "grid-mismatch"


class TimeRangeError(FracFlowError, ValueError):
    code = "t-out-of-range"


class InnerSolverStall(FracFlowError, RuntimeError):
    """The inner minimization did not reach the residual tolerance.

    ``best`` holds the best iterate found; ``step`` is the time-step index when
    raised from a flow, and ``states``/``trace`` the partial flow up to it.
    """

    code = "inner-solver-stall"

    def __init__(self, message, best=None, residual=None, step=None, states=None, trace=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.step = step
        self.states = states
        self.trace = trace


class NonConvergenceError(FracFlowError, RuntimeError):
    code = "nonconvergence"

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ZeroCollapseError(FracFlowError, ArithmeticError):
    code = "zero-collapse"


class FactorizationError(FracFlowError, ArithmeticError):
    code = "factorization-failure"


class InsufficientPointsError(FracFlowError, ValueError):
    code = "insufficient-points"


class ZeroMassError(FracFlowError, ValueError):
    code = "zero-mass"


class PreconditionError(FracFlowError, ValueError):
    code = "precondition-violated"


class CylinderDomainError(FracFlowError, ValueError):
    code = "cylinder-outside-domain"


class TimeResolutionError(FracFlowError, ValueError):
    code = "insufficient-time-resolution"


class SpatialResolutionError(FracFlowError, ValueError):
    code = "insufficient-spatial-resolution"


class ConfigError(FracFlowError, ValueError):
    """Config could not be parsed or validated; ``errors`` lists every problem."""

    def __init__(self, errors, code="validation-error"):
        self.errors = list(errors)
        self.code = code
        super().__init__("; ".join(self.errors))


class MissingArtifactError(FracFlowError, FileNotFoundError):
    code = "missing-artifact"


class VersionMismatchError(FracFlowError, ValueError):
    code = "version-mismatch"
