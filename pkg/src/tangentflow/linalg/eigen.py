"""Block shift-invert Lanczos for ``A x = lambda M x`` (smallest eigenvalues)."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .krylov import SolverError, amg, as_operator, cg
from .sparse import SparseMatrix


@dataclass
class EigenPairs:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int = 0
    n_solves: int = 0
    wall_time: float = 0.0
    history: list = field(default_factory=list)

    def clusters(self, rtol: float = 1e-4) -> list[tuple[float, int]]:
        """Group eigenvalues that agree to ``rtol``; returns (mean, multiplicity)."""
        return group_clusters(self.values, rtol)


def group_clusters(values, rtol: float = 1e-4) -> list[tuple[float, int]]:
    out: list[list[float]] = []
    for v in np.sort(np.asarray(values, dtype=float)):
        if out and abs(v - out[-1][-1]) <= rtol * max(abs(v), 1e-300):
            out[-1].append(v)
        else:
            out.append([v])
    return [(float(np.mean(c)), len(c)) for c in out]


def m_orthonormalize(X, M_op, against=None, M_against=None, drop: float = 1e-10):
    """M-orthonormalize the columns of ``X`` (two passes of modified Gram-Schmidt).

    Columns that become negligible are dropped.  Returns ``(Q, MQ)``.
    """
    cols, mcols = [], []
    for j in range(X.shape[1]):
        v = X[:, j].copy()
        mv = M_op(v)
        n0 = np.sqrt(max(v @ mv, 0.0))
        if n0 == 0:
            continue
        for _ in range(2):
            if against is not None and against.shape[1]:
                v = v - against @ (M_against.T @ v)
            for q, mq in zip(cols, mcols):
                v = v - q * (mq @ v)
        mv = M_op(v)
        nv = np.sqrt(max(v @ mv, 0.0))
        if nv <= drop * n0:
            continue
        cols.append(v / nv)
        mcols.append(mv / nv)
    if not cols:
        n = X.shape[0]
        return np.zeros((n, 0)), np.zeros((n, 0))
    return np.column_stack(cols), np.column_stack(mcols)


def block_lanczos(apply_inverse: Callable, M, n: int, k: int, block_size: int | None = None,
                  tol: float = 1e-8, max_basis: int | None = None, max_restarts: int = 6,
                  seed: int = 0, residual: Callable | None = None) -> EigenPairs:
    """Smallest ``k`` eigenpairs from the operator ``T = A^{-1} M``.

    Parameters
    ----------
    apply_inverse : callable
        ``b -> x`` with ``A x = b`` (restricted to the admissible subspace).
    M : SparseMatrix or callable
        Mass operator defining the inner product.
    residual : callable, optional
        ``(lambda, x) -> residual vector`` of the original problem; used for
        the reported residual norms ``||r|| / ||x||_M``.
    """
    t0 = time.perf_counter()
    M_op = as_operator(M)
    bs = block_size or max(1, min(k, 10))
    max_basis = max_basis or max(3 * k + 2 * bs, 40)
    max_basis = min(max_basis, n)
    rng = np.random.default_rng(seed)
    n_solves = 0

    def T(X):
        nonlocal n_solves
        out = np.empty_like(X)
        for j in range(X.shape[1]):
            out[:, j] = apply_inverse(M_op(X[:, j]))
            n_solves += 1
        return out

    start = T(rng.standard_normal((n, bs)))
    history = []
    vals = vecs = res = None
    for restart in range(max_restarts + 1):
        Q, MQ = m_orthonormalize(start, M_op)
        TQ = T(Q)
        while True:
            H = MQ.T @ TQ
            H = 0.5 * (H + H.T)
            theta, S = np.linalg.eigh(H)
            order = np.argsort(theta)[::-1]
            theta, S = theta[order], S[:, order]
            nk = min(k, len(theta))
            X = Q @ S[:, :nk]
            RT = TQ @ S[:, :nk] - X * theta[:nk]
            rn = np.sqrt(np.maximum(np.einsum("ij,ij->j", RT, np.column_stack([M_op(RT[:, j]) for j in range(nk)])), 0.0))
            rel = rn / np.maximum(np.abs(theta[:nk]), 1e-300)
            history.append(float(rel.max()) if nk else np.inf)
            done = nk == k and np.all(rel <= tol)
            room = max_basis - Q.shape[1]
            if done or room <= 0:
                break
            W = TQ[:, -bs:] if TQ.shape[1] >= bs else TQ
            W = W[:, :room]
            Qn, MQn = m_orthonormalize(W, M_op, Q, MQ)
            if Qn.shape[1] == 0:
                Qn, MQn = m_orthonormalize(T(rng.standard_normal((n, min(bs, room)))), M_op, Q, MQ)
                if Qn.shape[1] == 0:
                    break
            Q = np.column_stack([Q, Qn])
            MQ = np.column_stack([MQ, MQn])
            TQ = np.column_stack([TQ, T(Qn)])
        vals = 1.0 / theta[:nk]
        vecs = X
        if done:
            break
        keep = min(len(theta), k + bs)
        start = Q @ S[:, :keep]
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    if residual is not None:
        res = np.array([np.linalg.norm(residual(vals[j], vecs[:, j])) for j in range(len(vals))])
    else:
        res = rel[order] * np.abs(vals)
    return EigenPairs(vals, vecs, res, bool(done), len(history), n_solves,
                      time.perf_counter() - t0, history)


def eigs_smallest(A: SparseMatrix, M: SparseMatrix, k: int, tol: float = 1e-8,
                  kernel=None, block_size: int | None = None, inner_tol: float = 1e-12,
                  seed: int = 0) -> EigenPairs:
    """Smallest nonzero eigenpairs of the symmetric pencil ``(A, M)``.

    ``kernel`` holds a basis of the null space of ``A`` (for example the
    constants for the Laplace-Beltrami operator); eigenvectors are kept
    M-orthogonal to it.
    """
    pre = amg(A)
    Z = None if kernel is None else np.asarray(kernel, dtype=float).reshape(A.shape[0], -1)
    MZ = None if Z is None else np.column_stack([M.matvec(Z[:, j]) for j in range(Z.shape[1])])

    def m_project(x):
        if Z is None:
            return x
        c = np.linalg.solve(Z.T @ MZ, MZ.T @ x)
        return x - Z @ c

    def apply_inverse(b):
        x, rep = cg(A, b, tol=inner_tol, precond=pre, kernel=Z, maxit=5000)
        if not rep.converged and rep.residual > 1e3 * inner_tol:
            raise SolverError(f"inner solve failed (residual {rep.residual:.2e})", rep)
        return m_project(x)

    def residual(lam, x):
        return (A.matvec(x) - lam * M.matvec(x)) / np.sqrt(M.quad(x))

    return block_lanczos(apply_inverse, M, A.shape[0], k, block_size, tol, seed=seed,
                         residual=residual)
