"""Finite element spaces and assembly of surface bilinear forms.

Elements are flat triangles.  Scalar fields are P1/P2 Lagrange functions;
vector fields are P1/P2 ambient three-vectors whose nodal values are
restricted to the tangent plane of the exact surface at the node (two
tangent degrees of freedom per node).  Geometric coefficients at quadrature
points are evaluated at their closest points on the exact surface, and for
exact surfaces the integrals are pulled back through the closest-point map
so that functions are integrated as lifts on the true surface.
"""
from __future__ import annotations

import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg.sparse import SparseMatrix
from .mesh import TriMesh, quadrature_rule

_CHUNK = 4096
_settings = {"deterministic": False, "lift": True}


def set_deterministic(flag: bool) -> None:
    """Force serial assembly (parallel and serial results agree to round-off)."""
    _settings["deterministic"] = bool(flag)


def set_lift(flag: bool) -> None:
    """Toggle pulling integrals back to the exact surface (default on).

    With the lift, basis gradients are the tangential gradients of the
    lifted functions ``phi o p^-1`` and weights carry the exact area ratio;
    without it integrals live on the flat triangles.  Caches built under the
    other setting are not reused.
    """
    _settings["lift"] = bool(flag)


def _threads() -> int:
    if _settings["deterministic"]:
        return 1
    try:
        return max(1, int(os.environ.get("TANGENTFLOW_NUM_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# reference basis


def _basis(degree: int, lam: np.ndarray):
    """Basis values on barycentric points ``lam`` (Q, 3) -> (Q, nloc).

    Also returns d phi / d lambda_i as (Q, nloc, 3).
    """
    q = len(lam)
    if degree == 1:
        return lam.copy(), np.broadcast_to(np.eye(3), (q, 3, 3)).copy()
    if degree != 2:
        raise ValueError("only degrees 1 and 2 are supported")
    phi = np.zeros((q, 6))
    dphi = np.zeros((q, 6, 3))
    for i in range(3):
        phi[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
        dphi[:, i, i] = 4 * lam[:, i] - 1
    for k in range(3):
        a, b = k, (k + 1) % 3
        phi[:, 3 + k] = 4 * lam[:, a] * lam[:, b]
        dphi[:, 3 + k, a] = 4 * lam[:, b]
        dphi[:, 3 + k, b] = 4 * lam[:, a]
    return phi, dphi


def _frames(normals: np.ndarray) -> np.ndarray:
    """Orthonormal tangent pairs (N, 3, 2) for unit normals (N, 3)."""
    n = normals
    helper = np.zeros_like(n)
    helper[np.arange(len(n)), np.argmin(np.abs(n), axis=1)] = 1.0
    t1 = helper - np.sum(helper * n, axis=1, keepdims=True) * n
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2], axis=-1)


# ---------------------------------------------------------------------------
# spaces


@dataclass
class Space:
    """A scalar or vector Lagrange space on a triangle mesh.

    Vector spaces store three ambient components per node (``3*node + c``);
    with ``tangential="frame"`` the free unknowns are two tangent coordinates
    per node and :attr:`reduction` maps them to ambient components.
    """

    mesh: TriMesh
    degree: int
    vector: bool = False
    tangential: str | None = None
    cell_nodes: np.ndarray = field(init=False, repr=False)
    node_points: np.ndarray = field(init=False, repr=False)
    node_normals: np.ndarray | None = field(init=False, repr=False, default=None)
    frames: np.ndarray | None = field(init=False, repr=False, default=None)
    reduction: SparseMatrix | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        m = self.mesh
        if self.degree == 1:
            self.cell_nodes = m.triangles.copy()
            self.node_points = m.vertices.copy()
        else:
            self.cell_nodes = np.concatenate([m.triangles, m.n_vertices + m.triangle_edges], axis=1)
            mid = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
            self.node_points = np.concatenate([m.vertices, mid])
        if self.vector:
            if self.tangential is None:
                self.tangential = "frame" if m.surface.exact else "penalty"
            if m.surface.exact:
                self.node_normals = m.surface.normal(m.surface.closest_point(self.node_points))
            else:
                vn = m.vertex_normals()
                if self.degree == 2:
                    en = vn[m.edges[:, 0]] + vn[m.edges[:, 1]]
                    en /= np.linalg.norm(en, axis=1, keepdims=True)
                    vn = np.concatenate([vn, en])
                self.node_normals = vn
            if self.tangential == "frame":
                self.frames = _frames(self.node_normals)
                n = self.n_nodes
                rows = (3 * np.arange(n)[:, None, None] + np.arange(3)[None, :, None]).repeat(2, axis=2)
                cols = (2 * np.arange(n)[:, None, None] + np.arange(2)[None, None, :]).repeat(3, axis=1)
                self.reduction = SparseMatrix.from_coo(rows.ravel(), cols.ravel(),
                                                       self.frames.ravel(), (3 * n, 2 * n))

    @property
    def n_nodes(self) -> int:
        return len(self.node_points)

    @property
    def n_full(self) -> int:
        return 3 * self.n_nodes if self.vector else self.n_nodes

    @property
    def n_dofs(self) -> int:
        if self.vector and self.reduction is not None:
            return 2 * self.n_nodes
        return self.n_full

    @property
    def kind(self) -> str:
        return f"P{self.degree}" + ("vec" if self.vector else "")

    # -- conversions between reduced and ambient coefficient vectors
    def expand(self, coeffs) -> np.ndarray:
        """Ambient nodal values (N, 3) for vector spaces, (N,) for scalars."""
        coeffs = np.asarray(coeffs, dtype=float)
        if not self.vector:
            return coeffs
        full = self.reduction.matvec(coeffs) if self.reduction is not None else coeffs
        return full.reshape(-1, 3)

    def restrict(self, nodal: np.ndarray) -> np.ndarray:
        """Reduced coefficients from ambient nodal vectors (tangent part is kept)."""
        if not self.vector:
            return np.asarray(nodal, dtype=float)
        nodal = np.asarray(nodal, dtype=float).reshape(-1, 3)
        if self.reduction is None:
            return nodal.ravel()
        return np.einsum("nca,nc->na", self.frames, nodal).ravel()

    def reduce(self, A: SparseMatrix, other: "Space | None" = None) -> SparseMatrix:
        """Restrict an ambient-indexed matrix to the free unknowns."""
        R = self.reduction
        if other is None:
            return A if R is None else A.reduce(R)
        # rectangular: rows belong to ``other`` (scalar), columns to ``self``
        if R is None:
            return A
        return SparseMatrix.from_scipy(A.to_scipy() @ R.to_scipy())

    def reduce_vector(self, b: np.ndarray) -> np.ndarray:
        if self.vector and self.reduction is not None:
            return self.reduction.to_scipy().T @ b
        return b

    def interpolate(self, fn: Callable) -> np.ndarray:
        """Nodal interpolant of ``fn`` evaluated at the closest surface points."""
        pts = self.node_points
        if self.mesh.surface.exact:
            pts = self.mesh.surface.closest_point(pts)
        vals = np.asarray(fn(pts), dtype=float)
        return self.restrict(vals) if self.vector else vals


def build_space(mesh: TriMesh, kind: str, tangential: str | None = None) -> Space:
    """Create a space from a name such as ``"P1"``, ``"P2"``, ``"P2vec"``."""
    m = re.fullmatch(r"[Pp]([12])(vec)?", kind.strip())
    if m is None:
        raise ValueError(f"unsupported space kind {kind!r}; use P1, P2, P1vec or P2vec")
    if tangential not in (None, "frame", "penalty"):
        raise ValueError(f"unknown tangential constraint {tangential!r}")
    return Space(mesh, int(m.group(1)), m.group(2) is not None, tangential)


# ---------------------------------------------------------------------------
# quadrature data


@dataclass
class QuadData:
    points: np.ndarray      # (T, Q, 3) points on the flat triangles
    weights: np.ndarray     # (T, Q)
    phi: np.ndarray         # (Q, nloc)
    dphi: np.ndarray        # (T, Q, nloc, 3) gradients in the triangle plane
    nu: np.ndarray          # (T, Q, 3)
    P: np.ndarray           # (T, Q, 3, 3)
    B: np.ndarray           # (T, Q, 3, 3)
    M: np.ndarray           # (T, Q, 3, 3)
    closest: np.ndarray     # (T, Q, 3)
    face_normal: np.ndarray  # (T, 3)


def quad_data(mesh: TriMesh, degree: int, order: int = 4) -> QuadData:
    cache = mesh.__dict__.setdefault("_quad_cache", {})
    key = (degree, order, _settings["lift"])
    if key in cache:
        return cache[key]
    lam, w = quadrature_rule(order)
    phi, dphi_dlam = _basis(degree, lam)
    v = mesh.vertices[mesh.triangles]
    cr = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    area2 = np.linalg.norm(cr, axis=1)
    fn = cr / area2[:, None]
    glam = np.stack([np.cross(fn, v[:, (i + 2) % 3] - v[:, (i + 1) % 3]) / area2[:, None]
                     for i in range(3)], axis=1)                   # (T, 3, 3)
    dphi = np.einsum("qai,tij->tqaj", dphi_dlam, glam)
    pts = np.einsum("qi,tij->tqj", lam, v)
    weights = 0.5 * area2[:, None] * w[None, :]
    T, Q = pts.shape[:2]
    if mesh.surface.exact:
        g = mesh.surface.sample(pts.reshape(-1, 3))
        nu = g["nu"].reshape(T, Q, 3)
        P = g["P"].reshape(T, Q, 3, 3)
        B = g["B"].reshape(T, Q, 3, 3)
        Mw = g["M"].reshape(T, Q, 3, 3)
        closest = g["p"].reshape(T, Q, 3)
        if _settings["lift"]:
            dphi, weights = _lift(pts, closest, nu, P, B, fn, dphi, weights)
    else:
        nu = np.broadcast_to(fn[:, None, :], (T, Q, 3)).copy()
        P = np.eye(3)[None, None] - nu[..., :, None] * nu[..., None, :]
        B = np.zeros((T, Q, 3, 3))
        Mw = np.zeros((T, Q, 3, 3))
        closest = pts.copy()
    qd = QuadData(pts, weights, phi, dphi, nu, P, B, Mw, closest, fn)
    cache[key] = qd
    return qd


def _lift(pts, closest, nu, P, B, fn, dphi, weights):
    """Transform plane gradients and weights through the closest-point map.

    With signed distance ``d`` the map has derivative ``P (I + d B)^-1`` on
    the triangle plane.  Its inverse sends a tangent vector ``t`` to
    ``(I - nu n^T/(n.nu)) (I + d B) t``, whose transpose gives the lifted
    gradient; the area ratio is ``(n.nu) / det(I + d B)``.
    """
    d = np.einsum("tqi,tqi->tq", pts - closest, nu)
    cos = np.einsum("ti,tqi->tq", fn, nu)
    left = P + d[..., None, None] * B
    # (I - n nu^T / cos) g = g - n (nu.g)/cos
    nu_g = np.einsum("tqi,tqai->tqa", nu, dphi) / cos[..., None]
    g = dphi - nu_g[..., None] * fn[:, None, None, :]
    dphi_l = np.einsum("tqij,tqaj->tqai", left, g)
    det = np.linalg.det(np.eye(3)[None, None] + d[..., None, None] * B)
    return dphi_l, weights * np.abs(cos) / det


# ---------------------------------------------------------------------------
# generic local-to-global assembly


def _scatter(rows_local, cols_local, local, shape, symmetric=False) -> SparseMatrix:
    r = np.broadcast_to(rows_local[:, :, None], local.shape)
    c = np.broadcast_to(cols_local[:, None, :], local.shape)
    return SparseMatrix.from_coo(r.ravel(), c.ravel(), local.ravel(), shape, symmetric)


def _run_chunks(n: int, fn: Callable[[slice], np.ndarray]) -> np.ndarray:
    slices = [slice(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]
    nt = _threads()
    if nt > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            parts = list(ex.map(fn, slices))
    else:
        parts = [fn(s) for s in slices]
    return np.concatenate(parts, axis=0)


def _vec_dofs(space: Space) -> np.ndarray:
    """Ambient dof indices per cell, ordered (node, component)."""
    cn = space.cell_nodes
    return (3 * cn[:, :, None] + np.arange(3)[None, None, :]).reshape(len(cn), -1)


def _geom(qd: QuadData, name: str, sl: slice) -> np.ndarray:
    return getattr(qd, name)[sl]


# ---------------------------------------------------------------------------
# scalar forms


def scalar_stiffness(space: Space, order: int = 4) -> SparseMatrix:
    """``int grad_h u . grad_h v`` for a scalar space."""
    qd = quad_data(space.mesh, space.degree, order)

    def local(sl):
        d = qd.dphi[sl]
        return np.einsum("tq,tqai,tqbi->tab", qd.weights[sl], d, d)

    loc = _run_chunks(space.mesh.n_triangles, local)
    cn = space.cell_nodes
    return _scatter(cn, cn, loc, (space.n_nodes, space.n_nodes), True)


def scalar_mass(space: Space, order: int = 4) -> SparseMatrix:
    qd = quad_data(space.mesh, space.degree, order)
    ref = np.einsum("qa,qb->qab", qd.phi, qd.phi)
    loc = np.einsum("tq,qab->tab", qd.weights, ref)
    cn = space.cell_nodes
    return _scatter(cn, cn, loc, (space.n_nodes, space.n_nodes), True)


def lumped_mass(space: Space) -> np.ndarray:
    """Row sums of the P1 mass (positive for P1; used only as a preconditioner)."""
    m = scalar_mass(Space(space.mesh, 1) if space.degree != 1 else space)
    return m.row_sums()


def scalar_load(space: Space, f: Callable, order: int = 4) -> np.ndarray:
    """``int f v`` with ``f`` evaluated at closest points of the quadrature points."""
    qd = quad_data(space.mesh, space.degree, order)
    T, Q = qd.weights.shape
    fv = np.asarray(f(qd.closest.reshape(-1, 3)), dtype=float).reshape(T, Q)
    loc = np.einsum("tq,tq,qa->ta", qd.weights, fv, qd.phi)
    out = np.zeros(space.n_nodes)
    np.add.at(out, space.cell_nodes.ravel(), loc.ravel())
    return out


def scalar_gradient_load(space: Space, h: np.ndarray, order: int = 4) -> np.ndarray:
    """``int h . grad_h v`` for vector data ``h`` given at quadrature points (T, Q, 3)."""
    qd = quad_data(space.mesh, space.degree, order)
    loc = np.einsum("tq,tqi,tqai->ta", qd.weights, h, qd.dphi)
    out = np.zeros(space.n_nodes)
    np.add.at(out, space.cell_nodes.ravel(), loc.ravel())
    return out


def constant_vector(space: Space) -> np.ndarray:
    return np.ones(space.n_nodes)


def mean_zero_border(K: SparseMatrix, weights: np.ndarray) -> SparseMatrix:
    """Bordered matrix ``[[K, w], [w^T, 0]]`` enforcing ``w . u = 0`` by a multiplier."""
    import scipy.sparse as sp

    w = sp.csr_matrix(np.asarray(weights, dtype=float)[None, :])
    return SparseMatrix.from_scipy(sp.bmat([[K.to_scipy(), w.T], [w, None]], format="csr"))


# ---------------------------------------------------------------------------
# vector forms (ambient indexing; reduce with Space.reduce)


def _vector_form(space: Space, integrand: Callable, order: int = 4, symmetric=True) -> SparseMatrix:
    qd = quad_data(space.mesh, space.degree, order)
    nl = qd.phi.shape[1]

    def local(sl):
        loc = integrand(qd, sl)                  # (t, a, c, b, d): test (a,c), trial (b,d)
        return loc.reshape(loc.shape[0], 3 * nl, 3 * nl)

    loc = _run_chunks(space.mesh.n_triangles, local)
    dofs = _vec_dofs(space)
    n = space.n_full
    return _scatter(dofs, dofs, loc, (n, n), symmetric)


def vector_mass(space: Space, order: int = 4) -> SparseMatrix:
    """``int u . v``."""
    def integrand(qd, sl):
        s = np.einsum("tq,qa,qb->tab", qd.weights[sl], qd.phi, qd.phi)
        return np.einsum("tab,cd->tacbd", s, np.eye(3))
    return _vector_form(space, integrand, order)


def vector_stiffness(space: Space, order: int = 4) -> SparseMatrix:
    """``int (P J_h(u)) : (P J_h(v))`` with ``J_h`` the elementwise ambient gradient."""
    def integrand(qd, sl):
        d = qd.dphi[sl]
        return np.einsum("tq,tqcd,tqai,tqbi->tacbd", qd.weights[sl], qd.P[sl], d, d)
    return _vector_form(space, integrand, order)


def weingarten_mass(space: Space, order: int = 4) -> SparseMatrix:
    """``int (W u) . v`` with ``W = tr(B) B - B^2`` at the closest point."""
    def integrand(qd, sl):
        return np.einsum("tq,tqcd,qa,qb->tacbd", qd.weights[sl], qd.M[sl], qd.phi, qd.phi)
    return _vector_form(space, integrand, order)


def grad_div(space: Space, order: int = 4) -> SparseMatrix:
    """``int div_h u div_h v`` with ``div_h u = tr(P J_h(u))``."""
    def integrand(qd, sl):
        pg = np.einsum("tqcd,tqad->tqac", qd.P[sl], qd.dphi[sl])
        return np.einsum("tq,tqac,tqbd->tacbd", qd.weights[sl], pg, pg)
    return _vector_form(space, integrand, order)


def normal_penalty(space: Space, eps: float, order: int = 4) -> SparseMatrix:
    """``eps^{-1} int (u . nu)(v . nu)`` enforcing tangency weakly."""
    def integrand(qd, sl):
        nn = qd.nu[sl][..., :, None] * qd.nu[sl][..., None, :]
        return np.einsum("tq,tqcd,qa,qb->tacbd", qd.weights[sl], nn, qd.phi, qd.phi) / eps
    return _vector_form(space, integrand, order)


def divergence(vspace: Space, pspace: Space, order: int = 4) -> SparseMatrix:
    """``B[q, u] = int P grad_h q . u`` (so that ``-B u`` tests ``div u``).

    Rows are scalar nodes of ``pspace``, columns ambient vector dofs of ``vspace``.
    """
    if vspace.mesh is not pspace.mesh:
        raise ValueError("velocity and pressure spaces must share a mesh")
    qv = quad_data(vspace.mesh, vspace.degree, order)
    qp = quad_data(pspace.mesh, pspace.degree, order)

    def local(sl):
        pg = np.einsum("tqcd,tqbd->tqbc", qv.P[sl], qp.dphi[sl])
        loc = np.einsum("tq,tqbc,qa->tbac", qv.weights[sl], pg, qv.phi)
        return loc.reshape(loc.shape[0], loc.shape[1], -1)

    loc = _run_chunks(vspace.mesh.n_triangles, local)
    return _scatter(pspace.cell_nodes, _vec_dofs(vspace), loc, (pspace.n_nodes, vspace.n_full))


def vector_load(space: Space, f: Callable, order: int = 4) -> np.ndarray:
    """``int f . v`` (ambient indexing) with ``f`` evaluated at closest points."""
    qd = quad_data(space.mesh, space.degree, order)
    T, Q = qd.weights.shape
    fv = np.asarray(f(qd.closest.reshape(-1, 3)), dtype=float).reshape(T, Q, 3)
    return vector_load_values(space, fv, order)


def vector_load_values(space: Space, fv: np.ndarray, order: int = 4) -> np.ndarray:
    qd = quad_data(space.mesh, space.degree, order)
    loc = np.einsum("tq,tqc,qa->tac", qd.weights, fv, qd.phi).reshape(len(fv), -1)
    out = np.zeros(space.n_full)
    np.add.at(out, _vec_dofs(space).ravel(), loc.ravel())
    return out


# ---------------------------------------------------------------------------
# field evaluation at quadrature points


def eval_scalar(space: Space, coeffs, order: int = 4):
    """Values (T, Q) and tangential gradients (T, Q, 3) of a scalar field."""
    qd = quad_data(space.mesh, space.degree, order)
    u = np.asarray(coeffs, dtype=float)[space.cell_nodes]       # (T, nl)
    val = np.einsum("qa,ta->tq", qd.phi, u)
    grad = np.einsum("tqai,ta->tqi", qd.dphi, u)
    return val, grad


def eval_vector(space: Space, coeffs, order: int = 4):
    """Values (T, Q, 3) and covariant gradients ``P J_h`` (T, Q, 3, 3)."""
    qd = quad_data(space.mesh, space.degree, order)
    U = space.expand(coeffs)[space.cell_nodes]                   # (T, nl, 3)
    val = np.einsum("qa,tac->tqc", qd.phi, U)
    J = np.einsum("tac,tqai->tqci", U, qd.dphi)
    return val, np.einsum("tqcd,tqdi->tqci", qd.P, J)


def convection(space: Space, w_coeffs, order: int = 4) -> SparseMatrix:
    """``int (P J_h(u) w) . v`` for a fixed advecting field ``w`` (trial ``u``).

    ``w`` is given by free coefficients of ``space``; without a frame
    reduction its nodal normal components must vanish.
    """
    w_coeffs = np.asarray(w_coeffs, dtype=float)
    if len(w_coeffs) != space.n_dofs:
        raise ValueError(f"advecting field has {len(w_coeffs)} coefficients, space has {space.n_dofs}")
    if space.reduction is None and space.node_normals is not None:
        nodal = w_coeffs.reshape(-1, 3)
        normal = np.abs(np.einsum("nc,nc->n", nodal, space.node_normals))
        if normal.max(initial=0.0) > 1e-8 * max(np.abs(nodal).max(initial=0.0), 1e-300):
            raise ValueError("advecting field is not tangential")
    wv, _ = eval_vector(space, w_coeffs, order)

    def integrand(qd, sl):
        adv = np.einsum("tqbi,tqi->tqb", qd.dphi[sl], wv[sl])      # grad phi_b . w
        return np.einsum("tq,qa,tqcd,tqb->tacbd", qd.weights[sl], qd.phi, qd.P[sl], adv)
    return _vector_form(space, integrand, order, symmetric=False)


def convection_reaction(space: Space, u_coeffs, order: int = 4) -> SparseMatrix:
    """``int (P J_h(u) w) . v`` as a matrix acting on ``w`` (the Newton term)."""
    _, G = eval_vector(space, u_coeffs, order)

    def integrand(qd, sl):
        return np.einsum("tq,qa,qb,tqcd->tacbd", qd.weights[sl], qd.phi, qd.phi, G[sl])
    return _vector_form(space, integrand, order, symmetric=False)


def pointwise_divergence(space: Space, coeffs, order: int = 4) -> np.ndarray:
    _, G = eval_vector(space, coeffs, order)
    return np.trace(G, axis1=2, axis2=3)
