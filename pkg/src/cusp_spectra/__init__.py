"""Spectral stability of elliptic operators under domain perturbation, with outward cusps.

The pipeline pulls every perturbed domain back to one fixed reference domain,
assembles weighted P1 finite element matrices there, and compares the
resulting spectra and eigenfunctions.
"""
from .config import RunConfig, load
from .eigensolve import EigenDecomposition, solve_lowest
from .errors import CuspSpectraError
from .geometry import CuspGeometry, h_eps
from .mesh import TriangleMesh, mesh_rectangle, mesh_reference
from .metrics import eigenfunction_distance, fit_rate, projector_check, rate_exponent, schatten_distance
from .transform import CoefficientField, Transformation, phi_eps, pullback
from .vicinity import delta_q

__version__ = "0.1.0"

__all__ = [
    "CoefficientField", "CuspGeometry", "CuspSpectraError", "EigenDecomposition", "RunConfig",
    "Transformation", "TriangleMesh", "delta_q", "eigenfunction_distance", "fit_rate", "h_eps",
    "load", "mesh_rectangle", "mesh_reference", "phi_eps", "projector_check", "pullback",
    "rate_exponent", "schatten_distance", "solve_lowest",
]
