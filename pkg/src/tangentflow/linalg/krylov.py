"""Krylov solvers: deflated preconditioned CG, preconditioned MINRES, restarted GMRES."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sparse import SparseMatrix


class SolverError(RuntimeError):
    """A linear or nonlinear solve did not converge."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class BreakdownError(SolverError):
    """CG met a direction of non-positive curvature: the operator is not SPD."""


@dataclass
class SolveReport:
    method: str
    converged: bool
    iterations: int
    residual: float
    residual_history: list = field(default_factory=list)
    wall_time: float = 0.0
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "wall_time": float(self.wall_time),
            "message": self.message,
        }


def as_operator(A) -> Callable[[np.ndarray], np.ndarray]:
    if A is None:
        return lambda x: x
    if isinstance(A, SparseMatrix):
        return A.matvec
    if hasattr(A, "matvec"):
        return A.matvec
    if callable(A):
        return A
    raise TypeError(f"cannot use {type(A).__name__} as a linear operator")


def _kernel_projector(kernel):
    """Euclidean projector onto the orthogonal complement of ``kernel`` columns."""
    if kernel is None:
        return lambda v: v
    Z = np.asarray(kernel, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    Z, _ = np.linalg.qr(Z)
    return lambda v: v - Z @ (Z.T @ v)


def cg(A, b, x0=None, tol: float = 1e-10, maxit: int = 5000, precond=None,
       kernel=None) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients for symmetric positive (semi)definite ``A``.

    Parameters
    ----------
    A : SparseMatrix or callable
        Symmetric operator, positive definite on the complement of ``kernel``.
    b : ndarray
        Right-hand side.  Its component along ``kernel`` is discarded.
    tol : float
        Relative residual target ``||b - A x|| <= tol ||b||``.
    precond : callable, optional
        Symmetric positive definite preconditioner ``r -> z``.
    kernel : ndarray, optional
        Basis of the null space of ``A``; iterates are kept orthogonal to it.

    Returns
    -------
    x, report

    Raises
    ------
    BreakdownError
        If a search direction with ``p^T A p <= 0`` appears.
    """
    t0 = time.perf_counter()
    op = as_operator(A)
    pc = as_operator(precond)
    proj = _kernel_projector(kernel)
    b = proj(np.asarray(b, dtype=float))
    x = np.zeros_like(b) if x0 is None else proj(np.array(x0, dtype=float))
    bnorm = np.linalg.norm(b)
    hist = []
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport("cg", True, 0, 0.0, [0.0], time.perf_counter() - t0)
    r = b - op(x) if x0 is not None else b.copy()
    r = proj(r)
    z = proj(pc(r))
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    hist.append(res)
    it = 0
    while res > tol and it < maxit:
        ap = op(p)
        pap = p @ ap
        if pap <= 0:
            rep = SolveReport("cg", False, it, res, hist, time.perf_counter() - t0,
                              f"p^T A p = {pap:.3e} at iteration {it}")
            raise BreakdownError(f"CG breakdown: operator is not positive definite "
                                 f"(p^T A p = {pap:.3e} at iteration {it})", rep)
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        r = proj(r)
        it += 1
        res = np.linalg.norm(r) / bnorm
        hist.append(res)
        if res <= tol:
            break
        z = proj(pc(r))
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    true = np.linalg.norm(proj(b - op(x))) / bnorm
    rep = SolveReport("cg", true <= 10 * tol, it, true, hist, time.perf_counter() - t0)
    return x, rep


def minres(A, b, x0=None, tol: float = 1e-10, maxit: int = 5000,
           precond=None) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned MINRES for symmetric (possibly indefinite) systems.

    The preconditioner must be symmetric positive definite.  Convergence is
    monitored on the preconditioned residual norm; the reported residual is the
    true relative residual of the returned iterate.
    """
    t0 = time.perf_counter()
    op = as_operator(A)
    pc = as_operator(precond)
    b = np.asarray(b, dtype=float)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport("minres", True, 0, 0.0, [0.0], time.perf_counter() - t0)
    r1 = b - op(x) if x0 is not None else b.copy()
    y = pc(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise SolverError("MINRES preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    if beta1 == 0.0:
        return x, SolveReport("minres", True, 0, 0.0, [0.0], time.perf_counter() - t0)
    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    hist = [1.0]
    it = 0
    eps = np.finfo(float).eps
    while it < maxit:
        it += 1
        v = y / beta
        y = op(v)
        if it >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = pc(r2)
        oldb = beta
        bb = float(r2 @ y)
        if bb < 0:
            raise SolverError("MINRES preconditioner is not positive definite")
        beta = np.sqrt(bb)
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar
        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        hist.append(phibar / beta1)
        if phibar <= tol * beta1 or beta == 0.0:
            break
    true = np.linalg.norm(b - op(x)) / bnorm
    rep = SolveReport("minres", hist[-1] <= tol or true <= tol, it, true, hist,
                      time.perf_counter() - t0)
    return x, rep


def gmres(A, b, x0=None, tol: float = 1e-10, maxit: int = 2000, restart: int = 60,
          precond=None) -> tuple[np.ndarray, SolveReport]:
    """Right-preconditioned restarted GMRES; the residual is the true one."""
    t0 = time.perf_counter()
    op = as_operator(A)
    pc = as_operator(precond)
    b = np.asarray(b, dtype=float)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport("gmres", True, 0, 0.0, [0.0], time.perf_counter() - t0)
    hist = []
    total = 0
    r = b - op(x)
    res = np.linalg.norm(r) / bnorm
    hist.append(res)
    while res > tol and total < maxit:
        m = min(restart, maxit - total)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        beta = np.linalg.norm(r)
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        j_done = 0
        for j in range(m):
            Z[j] = pc(V[j])
            w = op(Z[j])
            for _ in range(2):  # classical Gram-Schmidt, twice
                h = V[: j + 1] @ w
                w = w - h @ V[: j + 1]
                H[: j + 1, j] += h
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 0:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            d = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / d, H[j + 1, j] / d
            H[j, j] = d
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_done = j + 1
            hist.append(abs(g[j + 1]) / bnorm)
            if abs(g[j + 1]) / bnorm <= tol or H[j, j] == 0.0:
                break
        yk = np.linalg.solve(np.triu(H[:j_done, :j_done]), g[:j_done])
        x = x + yk @ Z[:j_done]
        r = b - op(x)
        res = np.linalg.norm(r) / bnorm
        hist[-1] = res
    rep = SolveReport("gmres", res <= tol, total, res, hist, time.perf_counter() - t0)
    return x, rep


# ---------------------------------------------------------------------------
# preconditioners


def jacobi(A: SparseMatrix):
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("Jacobi preconditioner needs a positive diagonal")
    inv = 1.0 / d
    return lambda r: inv * r


def amg(A: SparseMatrix, near_null=None):
    """Smoothed-aggregation V-cycle used as a fixed SPD preconditioner."""
    import pyamg

    # the setup estimates spectral radii from the global legacy RNG; pin it
    # so that hierarchies are reproducible, then restore the caller's state
    state = np.random.get_state()
    np.random.seed(0)
    try:
        ml = pyamg.smoothed_aggregation_solver(
            A.to_scipy(), B=near_null, symmetry="symmetric",
            presmoother=("gauss_seidel", {"sweep": "symmetric"}),
            postsmoother=("gauss_seidel", {"sweep": "symmetric"}),
            max_coarse=200,
        )
    finally:
        np.random.set_state(state)
    pre = ml.aspreconditioner(cycle="V")
    return lambda r: pre.matvec(r)
