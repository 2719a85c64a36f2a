"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`CuspSpectraError`, so the CLI can turn it into a nonzero exit with a
readable message.
"""
from __future__ import annotations

import numpy as np


class CuspSpectraError(Exception):
    """Base class for all package errors."""


class DomainError(CuspSpectraError, ValueError):
    """A parameter lies outside the range where a formula is valid."""


class HypothesisError(DomainError):
    """Parameters violate the hypotheses of a rate statement."""


class BracketError(CuspSpectraError):
    """The residual has the same sign at both ends of a root bracket."""

    def __init__(self, message: str, lower=None, upper=None):
        super().__init__(message)
        self.lower = lower
        self.upper = upper


class UnsupportedDimensionError(CuspSpectraError, NotImplementedError):
    pass


class InvalidDomainError(CuspSpectraError, ValueError):
    pass


class OutOfDomainError(CuspSpectraError, ValueError):
    """A point handed to a map lies outside the map's domain."""

    def __init__(self, message: str, points=None):
        super().__init__(message)
        self.points = None if points is None else np.asarray(points)


class InterfaceError(CuspSpectraError):
    """A Jacobian was requested exactly on a branch interface."""

    def __init__(self, message: str, points=None):
        super().__init__(message)
        self.points = None if points is None else np.asarray(points)


class SingularityError(CuspSpectraError):
    """Singular or non-SPD matrix field at an evaluation point."""

    def __init__(self, message: str, point=None, element: int | None = None):
        super().__init__(message)
        self.point = point
        self.element = element


class MatrixDomainError(CuspSpectraError, ValueError):
    """Input matrix is not symmetric positive definite."""


class MeshError(CuspSpectraError):
    pass


class QuadratureError(CuspSpectraError):
    def __init__(self, message: str, element: int | None = None):
        super().__init__(message)
        self.element = element


class SolverError(CuspSpectraError):
    pass


class PartialConvergenceError(SolverError):
    def __init__(self, message: str, converged: int):
        super().__init__(message)
        self.converged = converged


class InputError(CuspSpectraError, ValueError):
    pass


class FitError(InputError):
    pass


class ClusterError(CuspSpectraError):
    pass


class ConfigError(CuspSpectraError, ValueError):
    pass
