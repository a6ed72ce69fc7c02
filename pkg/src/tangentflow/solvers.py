"""Problem drivers: scalar and vector Laplacians, Stokes, Helmholtz decomposition,
Stokes eigenproblem, Oseen and Navier-Stokes solvers."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import assemble as asm
from .linalg.eigen import EigenPairs, block_lanczos
from .linalg.krylov import SolveReport, SolverError, amg, cg, gmres, minres
from .linalg.sparse import SparseMatrix, block
from .mesh import TriMesh

VARIANTS = ("bochner", "hodge", "surface_diffusion", "bochner_weingarten")


def _near_null(space: asm.Space):
    """Ambient constant fields written in nodal tangent frames (AMG candidates)."""
    if space.frames is None:
        return None
    return np.stack([space.frames[:, c, :].ravel() for c in range(3)], axis=1)


class NonContractionError(SolverError):
    """The nonlinear fixed-point iteration is not contracting."""


def _require(rep: SolveReport, what: str, tol: float):
    if not rep.converged and not rep.residual <= 10 * tol:
        raise SolverError(f"{what} did not converge: residual {rep.residual:.3e} "
                          f"after {rep.iterations} iterations", rep)


# ---------------------------------------------------------------------------
# scalar problems


@dataclass
class ScalarSolution:
    space: asm.Space
    coeffs: np.ndarray
    report: SolveReport


class ScalarLaplace:
    """Laplace-Beltrami operator on a scalar Lagrange space with mean-zero constraint."""

    def __init__(self, mesh: TriMesh, degree: int = 1):
        self.space = asm.Space(mesh, degree)
        self.K = asm.scalar_stiffness(self.space)
        self.M = asm.scalar_mass(self.space)
        self.ones = np.ones(self.space.n_nodes)
        self.mass_ones = self.M.matvec(self.ones)
        self.area = float(self.ones @ self.mass_ones)
        self._pre = None

    @property
    def pre(self):
        if self._pre is None:
            self._pre = amg(self.K + self.M * 1e-12, near_null=self.ones[:, None])
        return self._pre

    def mean(self, u) -> float:
        return float(self.mass_ones @ u) / self.area

    def compatible(self, b):
        """Remove the discrete mean of the data so that ``1^T b = 0``."""
        return b - (self.ones @ b) * self.mass_ones / self.area

    def solve(self, b, tol: float = 1e-12, constraint: str = "deflation") -> tuple[np.ndarray, SolveReport]:
        """Solve ``K u = b`` with ``u`` of zero mean; ``b`` is made compatible first."""
        b = self.compatible(np.asarray(b, dtype=float))
        if constraint == "deflation":
            u, rep = cg(self.K, b, tol=tol, precond=self.pre, kernel=self.ones)
        elif constraint == "multiplier":
            Kb = asm.mean_zero_border(self.K, self.mass_ones)
            shift = amg(self.K + self.M)
            scale = 1.0 / self.area

            def pc(r):
                return np.concatenate([shift(r[:-1]), [scale * r[-1]]])

            sol, rep = minres(Kb, np.concatenate([b, [0.0]]), tol=tol, precond=pc)
            u = sol[:-1]
        else:
            raise ValueError(f"unknown constraint {constraint!r}")
        _require(rep, "Laplace-Beltrami solve", tol)
        return u - self.mean(u), rep


def solve_laplace_beltrami(mesh: TriMesh, f: Callable, degree: int = 1, tol: float = 1e-12,
                           constraint: str = "deflation") -> ScalarSolution:
    """``-Laplace u = f`` with zero-mean ``u``; ``f`` is evaluated at closest points.

    Data with a nonzero mean are projected onto mean-zero data with a warning.
    """
    op = ScalarLaplace(mesh, degree)
    qd = asm.quad_data(mesh, degree)
    fv = np.asarray(f(qd.closest.reshape(-1, 3)), dtype=float).reshape(qd.weights.shape)
    total, norm = np.sum(qd.weights * fv), np.sqrt(np.sum(qd.weights * fv ** 2))
    if abs(total) > 1e-8 * norm:
        warnings.warn(f"right-hand side has nonzero mean ({total:.3e}); projecting it out",
                      stacklevel=2)
    u, rep = op.solve(asm.scalar_load(op.space, f), tol, constraint)
    return ScalarSolution(op.space, u, rep)


def solve_biharmonic(mesh: TriMesh, f: Callable, degree: int = 1, tol: float = 1e-12) -> tuple[ScalarSolution, np.ndarray]:
    """Mixed form of ``Laplace^2 u = f``: ``w = Laplace u`` and ``Laplace w = f``.

    The block system is solved by elimination into two Laplace-Beltrami
    solves.  Returns the solution ``u`` and the auxiliary ``w``.
    """
    op = ScalarLaplace(mesh, degree)
    w, r1 = op.solve(-asm.scalar_load(op.space, f), tol)
    u, r2 = op.solve(-op.M.matvec(w), tol)
    rep = SolveReport("mixed-biharmonic", r1.converged and r2.converged,
                      r1.iterations + r2.iterations, max(r1.residual, r2.residual))
    return ScalarSolution(op.space, u, rep), w


# ---------------------------------------------------------------------------
# vector Laplacians


class VectorLaplace:
    """Tangential vector Laplacians on a P1/P2 tangential space.

    Variants (all with an optional zeroth-order ``shift * int u.v``):

    ``bochner``            int grad u : grad v
    ``hodge``              bochner + int (W u).v
    ``surface_diffusion``  bochner + int div u div v - int (W u).v
    ``bochner_weingarten`` bochner - int (W u).v

    where ``W = tr(B) B - B^2``.
    """

    def __init__(self, mesh: TriMesh, variant: str = "bochner", degree: int = 2,
                 shift: float = 0.0, tangential: str | None = None, penalty_eps: float | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        self.variant = variant
        self.space = asm.Space(mesh, degree, True, tangential)
        V = self.space
        full = asm.vector_stiffness(V)
        if variant in ("hodge", "surface_diffusion", "bochner_weingarten"):
            W = asm.weingarten_mass(V)
            full = full + W if variant == "hodge" else full - W
        if variant == "surface_diffusion":
            full = full + asm.grad_div(V)
        mass_full = asm.vector_mass(V)
        if shift:
            full = full + mass_full * shift
        if V.tangential == "penalty":
            eps = penalty_eps if penalty_eps is not None else mesh.mesh_size() ** 2
            full = full + asm.normal_penalty(V, eps)
        self.A = V.reduce(full)
        self.A.symmetric = True
        self.M = V.reduce(mass_full)
        self.M.symmetric = True
        self._pre = None

    @property
    def pre(self):
        if self._pre is None:
            self._pre = amg(self.A, near_null=_near_null(self.space))
        return self._pre

    def load(self, f: Callable) -> np.ndarray:
        return self.space.reduce_vector(asm.vector_load(self.space, f))

    def solve(self, b, tol: float = 1e-12) -> tuple[np.ndarray, SolveReport]:
        if self.variant in ("bochner", "hodge"):
            x, rep = cg(self.A, b, tol=tol, precond=self.pre)
        else:
            # possibly indefinite: MINRES with the shifted Bochner part as preconditioner
            pre = amg(self.space.reduce(asm.vector_stiffness(self.space) + asm.vector_mass(self.space)),
                      near_null=_near_null(self.space))
            x, rep = minres(self.A, b, tol=tol, precond=pre)
        _require(rep, f"{self.variant} vector Laplace solve", tol)
        return x, rep


@dataclass
class VectorSolution:
    space: asm.Space
    coeffs: np.ndarray
    report: SolveReport


def solve_vector_laplace(mesh: TriMesh, f: Callable, variant: str = "bochner", degree: int = 2,
                         shift: float = 0.0, tol: float = 1e-12) -> VectorSolution:
    op = VectorLaplace(mesh, variant, degree, shift)
    x, rep = op.solve(op.load(f), tol)
    return VectorSolution(op.space, x, rep)


def solve_vector_biharmonic(mesh: TriMesh, f: Callable, degree: int = 2, tol: float = 1e-12) -> VectorSolution:
    """Mixed Bochner biharmonic: ``w = Delta_B u``, ``Delta_B w = f`` (two SPD solves)."""
    op = VectorLaplace(mesh, "bochner", degree)
    w, r1 = op.solve(-op.load(f), tol)
    u, r2 = op.solve(-op.M.matvec(w), tol)
    rep = SolveReport("mixed-vector-biharmonic", r1.converged and r2.converged,
                      r1.iterations + r2.iterations, max(r1.residual, r2.residual))
    return VectorSolution(op.space, u, rep)


# ---------------------------------------------------------------------------
# Stokes


@dataclass
class StokesSolution:
    velocity_space: asm.Space
    pressure_space: asm.Space
    u: np.ndarray
    p: np.ndarray
    report: SolveReport


class StokesSystem:
    """Mixed velocity/pressure discretization of the surface Stokes problem.

    Unknowns are tangential velocities (``velocity`` space, default P2) and
    pressures (``pressure`` space, default P1).  The saddle matrix is
    ``[[A, B^T], [B, 0]]`` where ``B[q, u] = int grad q . u``.
    """

    def __init__(self, mesh: TriMesh, velocity: int = 2, pressure: int = 1,
                 variant: str = "bochner", shift: float = 0.0):
        self.mesh = mesh
        self.lap = VectorLaplace(mesh, variant, velocity, shift)
        self.V = self.lap.space
        self.Q = asm.Space(mesh, pressure)
        self.A = self.lap.A
        self.Mv = self.lap.M
        self.B = self.V.reduce(asm.divergence(self.V, self.Q), other=self.Q)
        self.BT = self.B.T
        self.Mp = asm.scalar_mass(self.Q)
        self.Kp = asm.scalar_stiffness(self.Q)
        self.nv, self.np_ = self.A.shape[0], self.Q.n_nodes
        self.p_ones = np.ones(self.np_)
        self.p_mass_ones = self.Mp.matvec(self.p_ones)
        self.area = float(self.p_ones @ self.p_mass_ones)
        self.mp_diag = asm.lumped_mass(self.Q) if pressure == 1 else self.Mp.diagonal()
        self._cache: dict = {}

    # -- helpers
    def split(self, x):
        return x[: self.nv], x[self.nv:]

    def p_mean_free(self, p):
        return p - float(self.p_mass_ones @ p) / self.area

    def p_compatible(self, r):
        """Remove the constant-pressure component of ``r`` (a vector or a block of columns)."""
        return r - np.multiply.outer(self.p_mass_ones, self.p_ones @ r) / self.area

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def saddle(self) -> SparseMatrix:
        return self._get("K", lambda: block([[self.A, self.BT], [self.B, None]]))

    @property
    def velocity_pre(self):
        return self._get("amgA", lambda: amg(self.A, near_null=_near_null(self.V)))

    def _block_pre(self, vel_pre):
        inv_mp = 1.0 / self.mp_diag

        def pc(r):
            return np.concatenate([vel_pre(r[: self.nv]), inv_mp * r[self.nv:]])
        return pc

    def pressure_rhs(self, g: Callable | None):
        if g is None:
            return np.zeros(self.np_)
        return -self.p_compatible(asm.scalar_load(self.Q, g))

    # -- solves
    def solve_saddle(self, F, G, tol: float = 1e-12, x0=None) -> tuple[np.ndarray, np.ndarray, SolveReport]:
        rhs = np.concatenate([F, self.p_compatible(np.asarray(G, dtype=float))])
        x, rep = minres(self.saddle, rhs, x0=x0, tol=tol, precond=self._block_pre(self.velocity_pre),
                        maxit=20000)
        if not rep.converged and not rep.residual <= 10 * tol:
            raise SolverError(f"Stokes saddle solve stagnated at residual {rep.residual:.3e} after "
                              f"{rep.iterations} iterations; the pressure block may be unstable "
                              f"(check the inf-sup constant of the element pair)", rep)
        u, p = self.split(x)
        return u, self.p_mean_free(p), rep

    def solve(self, f: Callable, g: Callable | None = None, tol: float = 1e-12) -> StokesSolution:
        F = self.lap.load(f)
        u, p, rep = self.solve_saddle(F, self.pressure_rhs(g), tol)
        return StokesSolution(self.V, self.Q, u, p, rep)

    def residual(self, u, p, F, G, N: SparseMatrix | None = None) -> float:
        """Relative residual of the (possibly nonlinear) saddle equations."""
        mom = self.A.matvec(u) + self.BT.matvec(p) - F
        if N is not None:
            mom = mom + N.matvec(u)
        con = self.B.matvec(u) - self.p_compatible(G)
        den = np.sqrt(np.linalg.norm(F) ** 2 + np.linalg.norm(G) ** 2)
        return float(np.sqrt(mom @ mom + con @ con) / max(den, 1e-300))

    # -- norms
    def h1_norm(self, u) -> float:
        return float(np.sqrt(max(self.A.quad(u) + self.Mv.quad(u), 0.0)))

    def l2_norm(self, u) -> float:
        return float(np.sqrt(max(self.Mv.quad(u), 0.0)))

    # -- Helmholtz decomposition
    @property
    def mass_saddle(self) -> SparseMatrix:
        return self._get("KM", lambda: block([[self.Mv, self.BT], [self.B, None]]))

    def _potential(self, degree: int):
        """Scalar potential space of ``degree`` with its divergence and mass blocks."""
        def build():
            if degree == self.Q.degree:
                return self.Q, self.B, self.Kp, self.Mp
            Q = asm.Space(self.mesh, degree)
            B = self.V.reduce(asm.divergence(self.V, Q), other=Q)
            return Q, B, asm.scalar_stiffness(Q), asm.scalar_mass(Q)
        return self._get(("potential", degree), build)

    def helmholtz(self, v, tol: float = 1e-13, potential_degree: int | None = None) -> "HelmholtzResult":
        """Split ``v = h + grad phi`` with ``h`` discretely divergence free.

        Solves ``M h + B^T phi = M v, B h = 0``; the gradient part is the
        mass-weighted representative ``M^{-1} B^T phi``.  The potential uses
        the velocity degree by default so that gradients of smooth
        potentials are resolved to the same order as the velocity; a field
        that is divergence free against that space is also divergence free
        against the (lower-degree) pressure space.
        """
        deg = potential_degree or self.V.degree
        Q, B, Kq, Mq = self._potential(deg)
        nq = Q.n_nodes
        ones = np.ones(nq)
        mass_ones = Mq.matvec(ones)
        KM = self._get(("KM", deg), lambda: block([[self.Mv, B.T], [B, None]]))
        v = np.asarray(v, dtype=float)
        jac = 1.0 / self.Mv.diagonal()
        spre = self._get(("amgKq", deg), lambda: amg(Kq + Mq, near_null=ones[:, None]))

        def pc(r):
            return np.concatenate([jac * r[: self.nv], spre(r[self.nv:])])

        rhs = np.concatenate([self.Mv.matvec(v), np.zeros(nq)])
        x, rep = minres(KM, rhs, tol=tol, precond=pc, maxit=20000)
        _require(rep, "Helmholtz decomposition", tol)
        h, phi = x[: self.nv], x[self.nv:]
        phi = phi - float(mass_ones @ phi) / float(ones @ mass_ones)
        grad, _ = cg(self.Mv, B.T.matvec(phi), tol=tol, precond=lambda r: jac * r)
        return HelmholtzResult(h, grad, phi, rep, Q)

    def leray(self, v, tol: float = 1e-13, potential_degree: int | None = None) -> np.ndarray:
        return self.helmholtz(v, tol, potential_degree).divergence_free


@dataclass
class HelmholtzResult:
    divergence_free: np.ndarray
    gradient: np.ndarray
    potential: np.ndarray
    report: SolveReport
    potential_space: asm.Space | None = None


def solve_stokes(mesh: TriMesh, f: Callable, g: Callable | None = None, tol: float = 1e-12,
                 velocity: int = 2, pressure: int = 1) -> StokesSolution:
    return StokesSystem(mesh, velocity, pressure).solve(f, g, tol)


def decoupled_pressure(system: StokesSystem, u, f: Callable, g_grad: Callable | None = None,
                       convective: bool = False, tol: float = 1e-12) -> np.ndarray:
    """Pressure from a scalar Laplace-Beltrami problem given the velocity.

    Solves ``int grad pi . grad psi = int h . grad psi`` with
    ``h = f + grad g + W u`` (minus ``(grad u) u`` when ``convective``).
    """
    V, Q = system.V, system.Q
    qd = asm.quad_data(V.mesh, V.degree)
    T, Qn = qd.weights.shape
    h = np.asarray(f(qd.closest.reshape(-1, 3)), dtype=float).reshape(T, Qn, 3)
    if g_grad is not None:
        h = h + np.asarray(g_grad(qd.closest.reshape(-1, 3)), dtype=float).reshape(T, Qn, 3)
    uv, G = asm.eval_vector(V, u)
    h = h + np.einsum("tqij,tqj->tqi", qd.M, uv)
    if convective:
        h = h - np.einsum("tqij,tqj->tqi", G, uv)
    lap = ScalarLaplace(V.mesh, Q.degree)
    rhs = asm.scalar_gradient_load(lap.space, h)
    pi, _ = lap.solve(rhs, tol)
    return pi


# ---------------------------------------------------------------------------
# Stokes operator: spectrum, fractional powers, inf-sup constant


class StokesOperator:
    """The discrete Stokes operator on divergence-free fields."""

    def __init__(self, system: StokesSystem):
        self.sys = system
        self.pairs: EigenPairs | None = None

    def _apply_inverse(self, tol):
        s = self.sys

        def apply(b):
            u, _, _ = s.solve_saddle(b, np.zeros(s.np_), tol)
            return u
        return apply

    def _pressure_fit(self, r, tol=1e-13):
        """Least-squares pressure ``p`` minimizing ``||r + B^T p||``."""
        s = self.sys
        BBt = SparseMatrix.from_scipy(s.B.to_scipy() @ s.BT.to_scipy(), True)
        pre = self.sys._get("amgBBt", lambda: amg(BBt + s.Mp * 1e-8, near_null=s.p_ones[:, None]))
        p, _ = cg(BBt, -s.B.matvec(r), tol=tol, precond=pre, kernel=s.p_ones)
        return p

    def residual(self, lam, x):
        s = self.sys
        r = s.A.matvec(x) - lam * s.Mv.matvec(x)
        r = r + s.BT.matvec(self._pressure_fit(r))
        return r / np.sqrt(s.Mv.quad(x))

    def eigs(self, k: int, tol: float = 1e-9, inner_tol: float = 1e-12, seed: int = 0,
             block_size: int | None = None) -> EigenPairs:
        s = self.sys
        self.pairs = block_lanczos(self._apply_inverse(inner_tol), s.Mv, s.nv, k, block_size, tol,
                                   seed=seed, residual=self.residual)
        return self.pairs

    def apply(self, v, tol: float = 1e-13) -> np.ndarray:
        """Stokes operator applied to a divergence-free ``v``: ``M w + B^T p = A v, B w = 0``."""
        s = self.sys
        jac = 1.0 / s.Mv.diagonal()
        spre = s._get("amgKp", lambda: amg(s.Kp + s.Mp, near_null=s.p_ones[:, None]))

        def pc(r):
            return np.concatenate([jac * r[: s.nv], spre(r[s.nv:])])

        rhs = np.concatenate([s.A.matvec(v), np.zeros(s.np_)])
        x, rep = minres(s.mass_saddle, rhs, tol=tol, precond=pc, maxit=20000)
        _require(rep, "Stokes operator application", tol)
        return x[: s.nv]

    def power(self, alpha: float, v) -> np.ndarray:
        """``A^alpha v`` by spectral calculus on the computed eigenpairs.

        ``v`` must lie (to round-off) in the span of the computed eigenvectors.
        """
        if self.pairs is None:
            raise SolverError("call eigs() before power()")
        X, w = self.pairs.vectors, self.pairs.values
        c = X.T @ self.sys.Mv.matvec(v)
        return X @ (w ** alpha * c)


def inf_sup_constant(system: StokesSystem, tol: float = 1e-6, seed: int = 0,
                     dense_limit: int = 6000) -> float:
    """Smallest ``beta`` with ``B A^{-1} B^T q = beta^2 M_p q`` on non-constant ``q``.

    Up to ``dense_limit`` pressure unknowns the Schur complement is formed
    from a sparse LU factorization of ``A`` and the pencil is solved densely;
    a singular Schur complement (spurious pressure modes) then gives 0.
    Larger systems use Lanczos with saddle solves as the inverse.
    """
    s = system
    if s.np_ <= dense_limit:
        from scipy.linalg import eigh
        from scipy.sparse.linalg import splu

        lu = splu(s.A.to_scipy().tocsc())
        Bs, BTs = s.B.to_scipy(), s.BT.to_scipy().tocsc()
        S = np.zeros((s.np_, s.np_))
        for j0 in range(0, s.np_, 256):
            j1 = min(j0 + 256, s.np_)
            S[:, j0:j1] = Bs @ lu.solve(BTs[:, j0:j1].toarray())
        S = 0.5 * (S + S.T)
        m = s.p_mass_ones
        # move the constant pressure out of the way
        S += 10.0 * np.outer(m, m) / s.area
        w = eigh(S, s.Mp.to_scipy().toarray(), eigvals_only=True, subset_by_index=[0, 0])
        return float(np.sqrt(max(w[0], 0.0)))

    def apply_inverse(b):
        # p solves B A^{-1} B^T p = b (b already mass-weighted); constants removed
        _, p, _ = s.solve_saddle(np.zeros(s.nv), -s.p_compatible(b), 1e-10)
        return p

    pairs = block_lanczos(apply_inverse, s.Mp, s.np_, 1, 4, tol, seed=seed)
    return float(np.sqrt(pairs.values[0]))


# ---------------------------------------------------------------------------
# Oseen and Navier-Stokes


def solve_oseen(system: StokesSystem, w, F, G, tol: float = 1e-12, x0=None,
                newton_u=None, check_divergence: bool = True) -> tuple[np.ndarray, np.ndarray, SolveReport]:
    """Linearized problem with advecting field ``w`` (restarted GMRES).

    With ``newton_u`` the Newton reaction term ``(grad u) delta`` is added.
    An advecting field that is not discretely divergence free is replaced
    by its Leray projection with a warning.
    """
    s = system
    w = np.asarray(w, dtype=float)
    if check_divergence and np.any(w):
        div = np.linalg.norm(s.p_compatible(s.B.matvec(w)))
        # size of the sums before cancellation
        scale = np.linalg.norm(abs(s.B.to_scipy()) @ np.abs(w))
        if div > 1e-8 * scale:
            warnings.warn("advecting field is not discretely divergence free; using its Leray projection",
                          stacklevel=2)
            w = s.leray(w)
    N = s.V.reduce(asm.convection(s.V, w))
    if newton_u is not None:
        N = N + s.V.reduce(asm.convection_reaction(s.V, newton_u))
    K = block([[s.A + N, s.BT], [s.B, None]])
    rhs = np.concatenate([F, s.p_compatible(np.asarray(G, dtype=float))])
    x, rep = gmres(K, rhs, x0=x0, tol=tol, restart=80, maxit=4000,
                   precond=s._block_pre(s.velocity_pre))
    _require(rep, "Oseen solve", tol)
    u, p = s.split(x)
    return u, s.p_mean_free(p), rep


@dataclass
class NavierStokesResult:
    u: np.ndarray
    p: np.ndarray
    iterations: int
    increments: list
    ratios: list
    residuals: list
    converged: bool
    method: str
    wall_time: float = 0.0
    inner_iterations: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "increments": [float(a) for a in self.increments],
            "contraction_ratios": [float(a) for a in self.ratios],
            "residuals": [float(a) for a in self.residuals],
            "wall_time": self.wall_time,
        }


def navier_stokes(system: StokesSystem, f: Callable, g: Callable | None = None,
                  method: str = "picard", tol: float = 1e-10, maxit: int = 50,
                  damping: float = 1.0, inner_tol: float = 1e-13,
                  raise_on_divergence: bool = True) -> NavierStokesResult:
    """Stationary Navier-Stokes by Picard (Oseen) or Newton iteration.

    Starts from the Stokes solution.  Stops when the relative H1 increment is
    at most ``tol`` and the assembled residual at most ``10 * tol``.  Three
    consecutive increment ratios above one are reported as divergence.
    """
    t0 = time.perf_counter()
    s = system
    F = s.lap.load(f)
    G = s.pressure_rhs(g)
    u, p, rep = s.solve_saddle(F, G, inner_tol)
    incs, ratios, resids, inner = [], [], [], [rep.iterations]
    growing = 0
    converged = False
    it = 0
    for it in range(1, maxit + 1):
        if method == "picard":
            un, pn, rep = solve_oseen(s, u, F, G, inner_tol, check_divergence=False)
        elif method == "newton":
            # J(u) delta = -R(u)
            N = s.V.reduce(asm.convection(s.V, u))
            R_m = s.A.matvec(u) + N.matvec(u) + s.BT.matvec(p) - F
            R_c = s.B.matvec(u) - s.p_compatible(G)
            du, dp, rep = solve_oseen(s, u, -R_m, -R_c, inner_tol, newton_u=u, check_divergence=False)
            un, pn = u + du, p + dp
        else:
            raise ValueError(f"unknown method {method!r}")
        inner.append(rep.iterations)
        un = u + damping * (un - u)
        pn = p + damping * (pn - p)
        du = un - u
        inc = s.h1_norm(du) / max(s.h1_norm(un), 1e-300)
        incs.append(s.h1_norm(du))
        if len(incs) >= 2:
            ratios.append(incs[-1] / max(incs[-2], 1e-300))
            growing = growing + 1 if ratios[-1] > 1.0 else 0
        u, p = un, s.p_mean_free(pn)
        N = s.V.reduce(asm.convection(s.V, u))
        resids.append(s.residual(u, p, F, G, N))
        if inc <= tol and resids[-1] <= 10 * tol:
            converged = True
            break
        if growing >= 3:
            if raise_on_divergence:
                raise NonContractionError(
                    f"{method} iteration is not contracting (increment ratios "
                    f"{', '.join(f'{r:.3g}' for r in ratios[-3:])}); try smaller data or damping < 1")
            break
    res = NavierStokesResult(u, p, it, incs, ratios, resids, converged, method,
                             time.perf_counter() - t0, inner)
    if not converged and raise_on_divergence:
        raise SolverError(f"{method} iteration did not converge in {maxit} steps "
                          f"(last increment {incs[-1]:.3e}, residual {resids[-1]:.3e})")
    return res


# ---------------------------------------------------------------------------
# Galerkin projection onto Stokes eigenfunctions


@dataclass
class GalerkinResult:
    coefficients: np.ndarray
    eigenvalues: np.ndarray
    u: np.ndarray
    p: np.ndarray
    iterations: int
    residual: float


def galerkin_navier_stokes(system: StokesSystem, f: Callable, n_modes: int = 20,
                           tol: float = 1e-12, maxit: int = 50, pairs: EigenPairs | None = None,
                           recover_pressure: bool = True) -> GalerkinResult:
    """Navier-Stokes restricted to the span of the first Stokes eigenfunctions.

    Solves ``w_i c_i + sum_jk T_ijk c_j c_k = <f, v_i>`` with
    ``T_ijk = int ((grad v_j) v_k) . v_i`` by Newton's method with a
    backtracking line search.
    """
    s = system
    if pairs is None:
        pairs = StokesOperator(s).eigs(n_modes)
    X = pairs.vectors[:, :n_modes]
    w = pairs.values[:n_modes]
    n = X.shape[1]
    Tt = np.zeros((n, n, n))
    for k in range(n):
        Nk = s.V.reduce(asm.convection(s.V, X[:, k]))
        Tt[:, :, k] = X.T @ Nk.matmat(X)
    Fm = s.lap.load(f)
    b = X.T @ Fm

    def resid(c):
        return w * c + np.einsum("ijk,j,k->i", Tt, c, c) - b

    c = b / w
    r = resid(c)
    it = 0
    for it in range(1, maxit + 1):
        J = np.diag(w) + np.einsum("ijk,k->ij", Tt, c) + np.einsum("ikj,k->ij", Tt, c)
        dc = np.linalg.solve(J, -r)
        step = 1.0
        rn0 = np.linalg.norm(r)
        while step > 1e-6:
            cn = c + step * dc
            rn = resid(cn)
            if np.linalg.norm(rn) < (1 - 1e-4 * step) * rn0 or rn0 == 0:
                break
            step *= 0.5
        c, r = cn, rn
        if np.linalg.norm(r) <= tol * max(np.linalg.norm(b), 1e-300):
            break
    u = X @ c
    p = np.zeros(s.np_)
    if recover_pressure:
        p = decoupled_pressure(s, u, f, convective=True)
    return GalerkinResult(c, w, u, p, it, float(np.linalg.norm(r)))


# ---------------------------------------------------------------------------
# functional entry points


def helmholtz_decompose(system: StokesSystem, v, tol: float = 1e-13) -> HelmholtzResult:
    return system.helmholtz(v, tol)


def leray_project(system: StokesSystem, v, tol: float = 1e-13) -> np.ndarray:
    return system.leray(v, tol)


def stokes_eigs(system: StokesSystem, k: int, tol: float = 1e-9, seed: int = 0) -> EigenPairs:
    return StokesOperator(system).eigs(k, tol=tol, seed=seed)


def fractional_stokes_apply(op: StokesOperator, alpha: float, v) -> tuple[np.ndarray, float]:
    """``A^alpha v`` on the computed eigenspan and the relative truncation remainder."""
    if alpha <= 0:
        raise ValueError("fractional power needs alpha > 0")
    if op.pairs is None:
        raise SolverError("call eigs() before applying fractional powers")
    Mv = op.sys.Mv
    X = op.pairs.vectors
    rest = v - X @ (X.T @ Mv.matvec(v))
    remainder = np.sqrt(max(Mv.quad(rest), 0.0)) / max(np.sqrt(Mv.quad(v)), 1e-300)
    return op.power(alpha, v), float(remainder)


def solve_navier_stokes(system: StokesSystem, f: Callable, g: Callable | None = None,
                        method: str = "picard", damping: float = 1.0, tol_nl: float = 1e-10,
                        max_nl: int = 50) -> NavierStokesResult:
    return navier_stokes(system, f, g, method, tol_nl, max_nl, damping)


def ns_galerkin(system: StokesSystem, f: Callable, n_modes: int = 20, tol: float = 1e-12,
                pairs: EigenPairs | None = None) -> GalerkinResult:
    return galerkin_navier_stokes(system, f, n_modes, tol, pairs=pairs)
