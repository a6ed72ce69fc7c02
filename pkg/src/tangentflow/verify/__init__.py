"""Certification harness: identity checks, refinement studies and constants."""
from .constants import estimate_infsup, estimate_poincare
from .convergence import ConvergenceRow, ConvergenceTable, ProblemConfig, convergence_study
from .identities import IDENTITIES, IdentityReport, check_identities

__all__ = [
    "IDENTITIES",
    "ConvergenceRow",
    "ConvergenceTable",
    "IdentityReport",
    "ProblemConfig",
    "check_identities",
    "convergence_study",
    "estimate_infsup",
    "estimate_poincare",
]
