"""Exact fields for manufactured solutions and discrete error norms."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .. import assemble as asm
from ..geometry import Surface, Torus


@dataclass
class ExactScalar:
    """Scalar field on the surface with its tangential gradient and data."""

    value: Callable
    tangential_grad: Callable
    laplacian: Callable | None = None    # minus Laplace-Beltrami of the field

    def __call__(self, x):
        return self.value(x)


@dataclass
class ExactVector:
    """Tangential vector field with its covariant gradient ``P grad_M u``."""

    value: Callable
    cov_grad: Callable

    def __call__(self, x):
        return self.value(x)

    def scaled(self, c: float) -> "ExactVector":
        return ExactVector(lambda x: c * self.value(x), lambda x: c * self.cov_grad(x))

    def __add__(self, other: "ExactVector") -> "ExactVector":
        return ExactVector(lambda x: self.value(x) + other.value(x),
                           lambda x: self.cov_grad(x) + other.cov_grad(x))


def scalar_from_polynomial(surface: Surface, value, grad, hess) -> ExactScalar:
    """Scalar field from an ambient function with exact derivatives.

    ``-Laplace u = -(P : hess u) + tr(B) (grad u . nu)`` is provided as data.
    """
    def tgrad(x):
        g = surface.sample(x)
        return np.einsum("nij,nj->ni", g["P"], grad(g["p"]))

    def neg_lap(x):
        g = surface.sample(x)
        p = g["p"]
        tr = np.trace(g["B"], axis1=1, axis2=2)
        return (-np.einsum("nij,nij->n", g["P"], hess(p))
                + tr * np.einsum("ni,ni->n", grad(p), g["nu"]))

    return ExactScalar(value, tgrad, neg_lap)


def vector_from_ambient(surface: Surface, p: Callable, dp: Callable) -> ExactVector:
    """Tangential field ``u = P p`` for an ambient field ``p`` with Jacobian ``dp``.

    Uses ``P grad_M (P p) = P (grad p) P - (nu . p) B``.
    """
    def value(x):
        g = surface.sample(x)
        return np.einsum("nij,nj->ni", g["P"], p(g["p"]))

    def cov(x):
        g = surface.sample(x)
        pv = p(g["p"])
        J = dp(g["p"])
        return (g["P"] @ J @ g["P"]
                - np.einsum("ni,ni->n", g["nu"], pv)[:, None, None] * g["B"])

    return ExactVector(value, cov)


# ---------------------------------------------------------------------------
# catalogue


def _mono_scalar(surface, c, powers):
    from ..geometry import Monomial
    m = Monomial(tuple(powers), c)
    return scalar_from_polynomial(surface, m.value, m.grad, m.hess)


def sphere_x3(surface: Surface) -> ExactScalar:
    """``u = x3``; on the unit sphere ``-Laplace u = 2 u``."""
    return _mono_scalar(surface, 1.0, (0, 0, 1))


def sphere_x1x2(surface: Surface) -> ExactScalar:
    """``u = x1 x2``; on the unit sphere ``-Laplace u = 6 u``."""
    return _mono_scalar(surface, 1.0, (1, 1, 0))


def rotation_field(surface: Surface, axis=(0.0, 0.0, 1.0)) -> ExactVector:
    """``P (a x x)``: a Killing field on surfaces of revolution about ``a``."""
    a = np.asarray(axis, dtype=float)
    W = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return vector_from_ambient(surface, lambda x: x @ W.T, lambda x: np.broadcast_to(W, (len(x), 3, 3)))


def gradient_field(surface: Surface, axis=(0.0, 0.0, 1.0)) -> ExactVector:
    """``P a`` (the tangential gradient of ``a . x``)."""
    a = np.asarray(axis, dtype=float)
    return vector_from_ambient(surface, lambda x: np.broadcast_to(a, x.shape).copy(),
                               lambda x: np.zeros((len(x), 3, 3)))


def curl_quadratic(surface: Surface) -> ExactVector:
    """Rotated gradient of ``x1 x2``: ``x cross grad(x1 x2)``.

    On the unit sphere it equals ``(-x1 x3, x2 x3, x1^2 - x2^2)``, a
    divergence-free field with ``-Delta_B u = 5 u``.
    """
    def p(x):
        return np.stack([-x[:, 0] * x[:, 2], x[:, 1] * x[:, 2], x[:, 0] ** 2 - x[:, 1] ** 2], axis=1)

    def dp(x):
        J = np.zeros((len(x), 3, 3))
        J[:, 0, 0] = -x[:, 2]
        J[:, 0, 2] = -x[:, 0]
        J[:, 1, 1] = x[:, 2]
        J[:, 1, 2] = x[:, 1]
        J[:, 2, 0] = 2 * x[:, 0]
        J[:, 2, 1] = -2 * x[:, 1]
        return J
    return vector_from_ambient(surface, p, dp)


@dataclass
class StokesMMS:
    velocity: ExactVector
    pressure: ExactScalar
    force: Callable
    divergence: Callable | None = None


def stokes_sphere_mms(surface: Surface, eps: float = 1.0, convective: bool = False) -> StokesMMS:
    """Unit-sphere solution ``u = eps P(e3 x x)``, ``pi = eps x3`` (Stokes).

    With ``convective`` the data are those of the Navier-Stokes problem: the
    rotation field advects itself by the gradient ``grad(x3^2/2)``, so the
    velocity is unchanged and ``pi = eps x3 - eps^2 (x3^2/2 - 1/6)``.
    """
    u = rotation_field(surface).scaled(eps)
    grad_e3 = gradient_field(surface)

    def force(x):
        return eps * (rotation_field(surface).value(x) + grad_e3.value(x))

    if convective:
        def pval(x):
            return eps * x[:, 2] - eps ** 2 * (0.5 * x[:, 2] ** 2 - 1.0 / 6.0)

        def pgrad(x):
            g = surface.sample(x)
            amb = np.zeros_like(x)
            amb[:, 2] = eps - eps ** 2 * g["p"][:, 2]
            return np.einsum("nij,nj->ni", g["P"], amb)
        pres = ExactScalar(pval, pgrad)
    else:
        base = sphere_x3(surface)
        pres = ExactScalar(lambda x: eps * base.value(x), lambda x: eps * base.tangential_grad(x))
    return StokesMMS(u, pres, force)


def stokes_compressible_mms(surface: Surface) -> StokesMMS:
    """``u = grad x3``, ``g = div u = -2 x3``, ``f = u``, ``pi = 0`` on the unit sphere."""
    u = gradient_field(surface)
    pres = ExactScalar(lambda x: np.zeros(len(x)), lambda x: np.zeros((len(x), 3)))
    return StokesMMS(u, pres, u.value, lambda x: -2.0 * x[:, 2])


@lru_cache(maxsize=4)
def _torus_symbolic(R: float, r: float):
    import sympy as sp

    th, ph = sp.symbols("theta phi", real=True)
    chi = sp.Matrix([(R + r * sp.cos(th)) * sp.cos(ph), (R + r * sp.cos(th)) * sp.sin(ph), r * sp.sin(th)])
    J = chi.jacobian([th, ph])
    g = sp.simplify(J.T * J)
    gi = sp.simplify(g.inv())
    a = sp.sqrt(sp.simplify(g.det()))
    v = sp.cos(th) * sp.cos(ph)
    dv = sp.Matrix([sp.diff(v, th), sp.diff(v, ph)])
    flux = a * gi * dv
    lap = (sp.diff(flux[0], th) + sp.diff(flux[1], ph)) / a
    grad = J * gi * dv
    f = sp.lambdify((th, ph), sp.simplify(-lap), "numpy")
    gr = sp.lambdify((th, ph), list(grad), "numpy")
    val = sp.lambdify((th, ph), v, "numpy")
    return f, gr, val


def torus_mms(surface: Torus) -> ExactScalar:
    """``u = cos(theta) cos(phi)`` in tube/azimuth angles; data by symbolic differentiation."""
    f, gr, val = _torus_symbolic(float(surface.major), float(surface.minor))

    def angles(x):
        p = surface.closest_point(x)
        phi = np.arctan2(p[:, 1], p[:, 0])
        rho = np.hypot(p[:, 0], p[:, 1])
        theta = np.arctan2(p[:, 2], rho - surface.major)
        return theta, phi

    def value(x):
        return val(*angles(x)) * np.ones(len(x))

    def tgrad(x):
        t, p = angles(x)
        return np.stack([np.broadcast_to(c, t.shape) for c in gr(t, p)], axis=1).astype(float)

    def neg_lap(x):
        return f(*angles(x)) * np.ones(len(x))

    return ExactScalar(value, tgrad, neg_lap)


# ---------------------------------------------------------------------------
# errors

_ERR_ORDER = 6


def _lifted(space) -> bool:
    return space.mesh.surface.exact and asm._settings["lift"]


def scalar_errors(space: asm.Space, coeffs, exact: ExactScalar, subtract_mean: bool = False) -> tuple[float, float]:
    """L2 and H1-seminorm errors of a scalar field against exact data."""
    qd = asm.quad_data(space.mesh, space.degree, _ERR_ORDER)
    val, grad = asm.eval_scalar(space, coeffs, _ERR_ORDER)
    T, Q = qd.weights.shape
    pts = qd.closest.reshape(-1, 3)
    ev = exact.value(pts).reshape(T, Q)
    eg = exact.tangential_grad(pts).reshape(T, Q, 3)
    diff = val - ev
    if subtract_mean:
        diff = diff - np.sum(qd.weights * diff) / np.sum(qd.weights)
    if not _lifted(space):
        n = qd.face_normal[:, None, :]
        eg = eg - np.sum(eg * n, axis=-1, keepdims=True) * n
    l2 = np.sqrt(np.sum(qd.weights * diff ** 2))
    h1 = np.sqrt(np.sum(qd.weights * np.sum((grad - eg) ** 2, axis=-1)))
    return float(l2), float(h1)


def vector_errors(space: asm.Space, coeffs, exact: ExactVector) -> tuple[float, float]:
    """L2 and H1-seminorm errors of a tangential field.

    On flat triangles the gradient error is measured on plane directions,
    ``(P J_h - grad u) P_h``.
    """
    qd = asm.quad_data(space.mesh, space.degree, _ERR_ORDER)
    val, G = asm.eval_vector(space, coeffs, _ERR_ORDER)
    T, Q = qd.weights.shape
    pts = qd.closest.reshape(-1, 3)
    ev = exact.value(pts).reshape(T, Q, 3)
    eg = exact.cov_grad(pts).reshape(T, Q, 3, 3)
    dG = G - eg
    if not _lifted(space):
        n = qd.face_normal
        Ph = np.eye(3)[None] - n[:, :, None] * n[:, None, :]
        dG = np.einsum("tqij,tjk->tqik", dG, Ph)
    l2 = np.sqrt(np.sum(qd.weights * np.sum((val - ev) ** 2, axis=-1)))
    h1 = np.sqrt(np.sum(qd.weights * np.sum(dG ** 2, axis=(-1, -2))))
    return float(l2), float(h1)


def vector_norms(space: asm.Space, coeffs) -> tuple[float, float]:
    """L2 norm and H1 seminorm of a discrete tangential field."""
    qd = asm.quad_data(space.mesh, space.degree, _ERR_ORDER)
    val, G = asm.eval_vector(space, coeffs, _ERR_ORDER)
    l2 = np.sqrt(np.sum(qd.weights * np.sum(val ** 2, axis=-1)))
    h1 = np.sqrt(np.sum(qd.weights * np.sum(G ** 2, axis=(-1, -2))))
    return float(l2), float(h1)


def scalar_l2_norm(space: asm.Space, coeffs) -> float:
    qd = asm.quad_data(space.mesh, space.degree, _ERR_ORDER)
    val, _ = asm.eval_scalar(space, coeffs, _ERR_ORDER)
    return float(np.sqrt(np.sum(qd.weights * val ** 2)))
