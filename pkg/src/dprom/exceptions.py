"""Exception types raised across the package."""


class DpromError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DpromError, ValueError):
    """Invalid user input: dimensions, counts, scenario files."""


class MeshQualityError(DpromError):
    """Singular or inverted isoparametric map."""


class GeometryError(MeshQualityError):
    """A defect realization inverts an element."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class DefectTooLargeError(DpromError, ArithmeticError):
    """``I + D_d`` is singular, the defected configuration is degenerate."""


class ConvergenceError(DpromError, RuntimeError):
    """A nonlinear or eigenvalue solver failed to converge."""

    def __init__(self, message, residual=None, time=None):
        super().__init__(message)
        self.residual = residual
        self.time = time
