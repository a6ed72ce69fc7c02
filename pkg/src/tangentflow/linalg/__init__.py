"""Sparse matrices, Krylov solvers and eigensolvers."""
from .kernels import BACKEND
from .sparse import SparseMatrix, block, read_matrix_market, write_matrix_market

__all__ = ["BACKEND", "SparseMatrix", "block", "read_matrix_market", "write_matrix_market"]
