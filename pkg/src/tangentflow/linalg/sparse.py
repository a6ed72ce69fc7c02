"""Compressed sparse row matrices.

Products with vectors go through the kernels in :mod:`.kernels`; sparse
matrix algebra (products of matrices, transposes, reductions) is delegated to
scipy.sparse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import kernels


@dataclass
class SparseMatrix:
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple[int, int]
    symmetric: bool = False

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(self.data, dtype=float)
        self.shape = (int(self.shape[0]), int(self.shape[1]))

    # -- construction
    @classmethod
    def from_coo(cls, rows, cols, vals, shape, symmetric: bool = False) -> "SparseMatrix":
        """Build from triplets; duplicate entries are summed."""
        rows = np.ascontiguousarray(rows, dtype=np.int64).ravel()
        cols = np.ascontiguousarray(cols, dtype=np.int64).ravel()
        vals = np.ascontiguousarray(vals, dtype=float).ravel()
        if len(rows) and (rows.min() < 0 or rows.max() >= shape[0] or cols.min() < 0 or cols.max() >= shape[1]):
            raise IndexError("triplet index outside the matrix shape")
        ip, ix, dv = kernels.coo_to_csr(int(shape[0]), int(shape[1]), rows, cols, vals)
        return cls(ip, ix, dv, shape, symmetric)

    @classmethod
    def from_scipy(cls, m, symmetric: bool = False) -> "SparseMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.indptr, m.indices, m.data, m.shape, symmetric)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(np.arange(n + 1), np.arange(n), np.ones(n), (n, n), True)

    @classmethod
    def diag(cls, d) -> "SparseMatrix":
        d = np.asarray(d, dtype=float)
        n = len(d)
        return cls(np.arange(n + 1), np.arange(n), d, (n, n), True)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    # -- basic properties
    @property
    def nnz(self) -> int:
        return len(self.data)

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        s = self.to_scipy()
        d = abs(s - s.T)
        scale = abs(s).max() if self.nnz else 1.0
        return d.nnz == 0 or d.max() <= rtol * scale

    # -- products
    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return self.matmat(x)
        if x.shape[0] != self.shape[1]:
            raise ValueError(f"shape mismatch: {self.shape} @ {x.shape}")
        out = np.empty(self.shape[0])
        kernels.csr_matvec(self.indptr, self.indices, self.data, np.ascontiguousarray(x), out)
        return out

    def matmat(self, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float)
        out = np.empty((self.shape[0], x.shape[1]))
        kernels.csr_matmat(self.indptr, self.indices, self.data, x, out)
        return out

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return SparseMatrix.from_scipy(self.to_scipy() @ other.to_scipy())
        return self.matvec(other)

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy() + other.to_scipy(),
                                       self.symmetric and other.symmetric)

    def __sub__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy() - other.to_scipy(),
                                       self.symmetric and other.symmetric)

    def __mul__(self, alpha: float) -> "SparseMatrix":
        return SparseMatrix(self.indptr, self.indices, alpha * self.data, self.shape, self.symmetric)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    @property
    def T(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T, self.symmetric)

    def reduce(self, R: "SparseMatrix", L: "SparseMatrix | None" = None) -> "SparseMatrix":
        """Return ``L^T A R`` (``L`` defaults to ``R``)."""
        r = R.to_scipy()
        left = r if L is None else L.to_scipy()
        return SparseMatrix.from_scipy(left.T @ self.to_scipy() @ r,
                                       self.symmetric and L is None)

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.to_scipy().sum(axis=1)).ravel()

    def quad(self, x, y=None) -> float:
        """Bilinear form ``y^T A x`` (``y`` defaults to ``x``)."""
        ax = self.matvec(x)
        return float(np.dot(x if y is None else y, ax))


def block(blocks) -> SparseMatrix:
    """Assemble a block matrix from a nested list (``None`` for zero blocks)."""
    sb = [[None if b is None else b.to_scipy() for b in row] for row in blocks]
    return SparseMatrix.from_scipy(sp.bmat(sb, format="csr"))


def write_matrix_market(path, A: SparseMatrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), A.to_scipy().tocoo(), comment=comment, precision=17,
                     symmetry="symmetric" if A.symmetric and A.is_symmetric(rtol=0.0) else "general")


def read_matrix_market(path) -> SparseMatrix:
    m = scipy.io.mmread(str(path))
    if not sp.issparse(m):
        m = sp.csr_matrix(m)
    out = SparseMatrix.from_scipy(m)
    out.symmetric = out.is_symmetric()
    return out
