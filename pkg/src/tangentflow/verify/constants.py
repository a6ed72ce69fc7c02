"""Discrete Poincaré and inf-sup constants."""
from __future__ import annotations

from ..linalg.eigen import eigs_smallest
from ..mesh import TriMesh
from ..solvers import StokesSystem, VectorLaplace, inf_sup_constant


def estimate_poincare(mesh: TriMesh, degree: int = 2, variant: str = "bochner",
                      tol: float = 1e-9, k: int = 3) -> float:
    """Smallest generalized eigenvalue of (vector stiffness, vector mass).

    This is the square of the best constant in ``||grad v|| >= C ||v||`` on
    the discrete tangential space.  ``k`` eigenvalues are computed so that a
    degenerate lowest cluster does not slow the iteration down.
    """
    op = VectorLaplace(mesh, variant, degree)
    pairs = eigs_smallest(op.A, op.M, k, tol)
    return float(pairs.values[0])


def estimate_infsup(mesh: TriMesh, velocity: int = 2, pressure: int = 1, tol: float = 1e-6) -> float:
    """Inf-sup constant of a velocity/pressure pair (constant pressures removed).

    ``velocity=1, pressure=1`` gives the unstable equal-order pair, whose
    constant decays with the mesh size.
    """
    return inf_sup_constant(StokesSystem(mesh, velocity, pressure), tol)
