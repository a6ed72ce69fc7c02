"""Exact surface geometry: charts, closest-point maps, normals and curvature.

Built-in surfaces carry an atlas of analytic charts whose derivatives up to
third order are supplied in closed form.  Pointwise quantities (metric,
normal, projection, shape operator) are computed from the charts; vectorized
closed-form versions are provided for assembly, where they are evaluated at
many quadrature points at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np


class ProjectionError(ValueError):
    """Raised when a point is not (close enough to) the surface."""


class GeometryError(ValueError):
    """Raised for invalid surface parameters or singular chart points."""


# ---------------------------------------------------------------------------
# charts


def _trig(kind: str, t, order: int):
    """``order``-th derivative of sin or cos evaluated at ``t``."""
    shift = order * np.pi / 2.0
    return np.sin(t + shift) if kind == "sin" else np.cos(t + shift)


@dataclass(frozen=True)
class Chart:
    """Analytic chart ``y -> x`` on a rectangular parameter domain.

    Components are sums of separable trigonometric products
    ``coef * f(y1) * g(y2)`` so that every mixed derivative is available in
    closed form.  ``terms[i]`` lists ``(coef, f, g)`` for component ``i`` where
    ``f`` and ``g`` are ``"sin"``, ``"cos"`` or ``"one"``.
    """

    name: str
    terms: tuple
    lower: tuple[float, float]
    upper: tuple[float, float]
    periodic: tuple[bool, bool]
    orientation: float
    axes: tuple[int, int, int] = (0, 1, 2)

    def _factor(self, kind, t, order):
        if kind == "one":
            return np.ones_like(t) if order == 0 else np.zeros_like(t)
        return _trig(kind, t, order)

    def derivative(self, y, m: int, n: int) -> np.ndarray:
        """``d^m/dy1^m d^n/dy2^n`` of the chart at ``y``; shape ``(3,)``."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(3)
        for i, comp in enumerate(self.terms):
            for coef, f, g in comp:
                out[i] += coef * self._factor(f, y[0], m) * self._factor(g, y[1], n)
        return out

    def jet(self, y, order: int = 2) -> list[np.ndarray]:
        """Chart value and derivative tensors up to ``order``.

        Returns a list whose entry ``k`` has shape ``(3,) + (2,)*k``.
        """
        out = [self.derivative(y, 0, 0)]
        for k in range(1, order + 1):
            tens = np.zeros((3,) + (2,) * k)
            for idx in np.ndindex(*(2,) * k):
                m = sum(1 for a in idx if a == 0)
                tens[(slice(None),) + idx] = self.derivative(y, m, k - m)
            out.append(tens)
        return out

    def boundary_distance(self, y) -> float:
        d = np.inf
        for a in range(2):
            if self.periodic[a]:
                continue
            d = min(d, y[a] - self.lower[a], self.upper[a] - y[a])
        return float(d)

    def wrap(self, y) -> np.ndarray:
        y = np.array(y, dtype=float)
        for a in range(2):
            if self.periodic[a]:
                span = self.upper[a] - self.lower[a]
                y[a] = self.lower[a] + np.mod(y[a] - self.lower[a], span)
        return y


def _polar_chart(name, scale, axes):
    """Polar-angle chart of an ellipsoid with the pole along ``axes[2]``."""
    s = scale
    comp = [None, None, None]
    comp[axes[0]] = ((s[axes[0]], "sin", "cos"),)
    comp[axes[1]] = ((s[axes[1]], "sin", "sin"),)
    comp[axes[2]] = ((s[axes[2]], "cos", "one"),)
    return Chart(name, tuple(comp), (0.0, -np.pi), (np.pi, np.pi),
                 (False, True), 1.0, axes)


def _torus_chart(name, major, minor, offset):
    comp = (
        ((major, "one", "cos"), (minor, "cos", "cos")),
        ((major, "one", "sin"), (minor, "cos", "sin")),
        ((minor, "sin", "one"),),
    )
    lo = (-np.pi + offset, -np.pi + offset)
    hi = (np.pi + offset, np.pi + offset)
    return Chart(name, comp, lo, hi, (True, True), -1.0)


# ---------------------------------------------------------------------------
# surfaces


@dataclass
class Surface:
    """Base class for closed surfaces with an exact description."""

    kind: str = field(default="abstract", init=False)
    exact: bool = field(default=True, init=False)

    # -- to be provided by subclasses
    def closest_point(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def shape_operator(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def charts(self) -> list[Chart]:
        raise NotImplementedError

    def chart_coordinates(self, chart: Chart, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- shared helpers
    def distance(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.linalg.norm(x - self.closest_point(x), axis=1)

    def sample(self, x: np.ndarray) -> dict:
        """Vectorized exact geometry at the closest points of ``x``.

        Returns a dict with ``p``, ``nu``, ``P``, ``B`` and ``M`` arrays.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.closest_point(x)
        nu = self.normal(p)
        proj = np.eye(3)[None] - nu[:, :, None] * nu[:, None, :]
        shape = self.shape_operator(p)
        tr = np.trace(shape, axis1=1, axis2=2)
        weing = tr[:, None, None] * shape - shape @ shape
        return {"p": p, "nu": nu, "P": proj, "B": shape, "M": weing}

    def select_chart(self, p: np.ndarray) -> tuple[Chart, np.ndarray]:
        """Chart containing ``p`` whose parameters are farthest from the boundary."""
        best = None
        for ch in self.charts():
            y = ch.wrap(self.chart_coordinates(ch, p))
            d = ch.boundary_distance(y)
            if best is None or d > best[2]:
                best = (ch, y, d)
        return best[0], best[1]

    def reference_area(self) -> float | None:
        return None


@dataclass
class Ellipsoid(Surface):
    """Axis-aligned ellipsoid ``sum x_i^2 / a_i^2 = 1``."""

    axes_lengths: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = field(default="ellipsoid", init=False)
    newton_tol: float = field(default=1e-12, kw_only=True)
    newton_maxit: int = field(default=50, kw_only=True)

    def __post_init__(self):
        a = np.asarray(self.axes_lengths, dtype=float)
        if a.shape != (3,) or np.any(a <= 0):
            raise GeometryError("ellipsoid semi-axes must be three positive numbers")
        self._a = a
        self._charts = [
            _polar_chart("polar-z", a, (0, 1, 2)),
            _polar_chart("polar-x", a, (1, 2, 0)),
        ]

    def charts(self):
        return self._charts

    def chart_coordinates(self, chart, p):
        a = self._a
        i, j, k = chart.axes
        q = np.asarray(p, dtype=float) / a
        theta = np.arccos(np.clip(q[k], -1.0, 1.0))
        phi = np.arctan2(q[j], q[i])
        return np.array([theta, phi])

    def closest_point(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a2 = self._a ** 2
        # Lagrange condition: y_i = x_i a_i^2 / (a_i^2 + t), sum y_i^2/a_i^2 = 1
        t = np.zeros(len(x))
        lo = -a2.min()
        for _ in range(self.newton_maxit):
            den = a2[None, :] + t[:, None]
            f = np.sum(x ** 2 * a2 / den ** 2, axis=1) - 1.0
            df = -2.0 * np.sum(x ** 2 * a2 / den ** 3, axis=1)
            step = np.where(df != 0.0, f / np.where(df != 0.0, df, 1.0), 0.0)
            tn = t - step
            # damping keeps the multiplier to the right of the pole at -min a^2
            bad = tn <= lo
            tn[bad] = 0.5 * (t[bad] + lo)
            t = tn
            if np.all(np.abs(f) < self.newton_tol):
                break
        return x * a2 / (a2[None, :] + t[:, None])

    def normal(self, p):
        p = np.atleast_2d(p)
        g = p / self._a ** 2
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def shape_operator(self, p):
        p = np.atleast_2d(p)
        grad = 2.0 * p / self._a ** 2
        gn = np.linalg.norm(grad, axis=1)
        nu = grad / gn[:, None]
        proj = np.eye(3)[None] - nu[:, :, None] * nu[:, None, :]
        hess = np.diag(2.0 / self._a ** 2)
        return proj @ hess @ proj / gn[:, None, None]

    def reference_area(self):
        a = self._a
        if np.allclose(a, a[0]):
            return 4.0 * np.pi * a[0] ** 2
        return None


@dataclass
class Sphere(Ellipsoid):
    """Sphere of given radius centred at the origin."""

    radius: float = 1.0
    axes_lengths: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0), init=False)
    kind: str = field(default="sphere", init=False)

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError("sphere radius must be positive")
        self.axes_lengths = (self.radius,) * 3
        super().__post_init__()

    def closest_point(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(r == 0):
            raise ProjectionError("closest point undefined at the sphere centre")
        return self.radius * x / r

    def normal(self, p):
        p = np.atleast_2d(p)
        return p / np.linalg.norm(p, axis=1, keepdims=True)

    def shape_operator(self, p):
        nu = self.normal(p)
        return (np.eye(3)[None] - nu[:, :, None] * nu[:, None, :]) / self.radius


@dataclass
class Torus(Surface):
    """Torus of revolution about the x3 axis."""

    major: float = 2.0
    minor: float = 1.0
    kind: str = field(default="torus", init=False)

    def __post_init__(self):
        if not (0 < self.minor < self.major):
            raise GeometryError("torus needs 0 < minor radius < major radius")
        self._charts = [
            _torus_chart("angles", self.major, self.minor, 0.0),
            _torus_chart("angles-shifted", self.major, self.minor, np.pi),
        ]

    def charts(self):
        return self._charts

    def chart_coordinates(self, chart, p):
        p = np.asarray(p, dtype=float)
        phi = np.arctan2(p[1], p[0])
        rho = np.hypot(p[0], p[1])
        theta = np.arctan2(p[2], rho - self.major)
        return np.array([theta, phi])

    def _tube_centre(self, x):
        rho = np.hypot(x[:, 0], x[:, 1])
        if np.any(rho == 0):
            raise ProjectionError("closest point undefined on the torus axis")
        c = np.zeros_like(x)
        c[:, 0] = self.major * x[:, 0] / rho
        c[:, 1] = self.major * x[:, 1] / rho
        return c

    def closest_point(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        c = self._tube_centre(x)
        d = x - c
        n = np.linalg.norm(d, axis=1, keepdims=True)
        if np.any(n == 0):
            raise ProjectionError("closest point undefined on the torus core circle")
        return c + self.minor * d / n

    def normal(self, p):
        p = np.atleast_2d(p)
        d = p - self._tube_centre(p)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def shape_operator(self, p):
        p = np.atleast_2d(p)
        nu = self.normal(p)
        rho = np.hypot(p[:, 0], p[:, 1])
        t = np.zeros_like(p)
        t[:, 0] = -p[:, 1] / rho
        t[:, 1] = p[:, 0] / rho
        cos_t = nu[:, 0] * p[:, 0] / rho + nu[:, 1] * p[:, 1] / rho
        k_phi = cos_t / rho
        proj = np.eye(3)[None] - nu[:, :, None] * nu[:, None, :]
        tt = t[:, :, None] * t[:, None, :]
        return (proj - tt) / self.minor + k_phi[:, None, None] * tt

    def reference_area(self):
        return 4.0 * np.pi ** 2 * self.major * self.minor


@dataclass
class PlanePatch(Surface):
    """Flat patch ``x3 = 0`` over ``[-1, 1]^2``; only for local checks."""

    kind: str = field(default="plane", init=False)

    def __post_init__(self):
        self._chart = _FlatChart()

    def charts(self):
        return [self._chart]

    def chart_coordinates(self, chart, p):
        return np.asarray(p, dtype=float)[:2].copy()

    def closest_point(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float)).copy()
        x[:, 2] = 0.0
        return x

    def normal(self, p):
        p = np.atleast_2d(p)
        n = np.zeros_like(p)
        n[:, 2] = 1.0
        return n

    def shape_operator(self, p):
        return np.zeros((len(np.atleast_2d(p)), 3, 3))


class _FlatChart(Chart):
    def __init__(self):
        super().__init__("flat", (), (-1.0, -1.0), (1.0, 1.0), (False, False), 1.0)

    def derivative(self, y, m, n):
        y = np.asarray(y, dtype=float)
        if m == 0 and n == 0:
            return np.array([y[0], y[1], 0.0])
        if m + n == 1:
            return np.array([float(m), float(n), 0.0])
        return np.zeros(3)


@dataclass
class MeshOnly(Surface):
    """Placeholder for geometry known only through a triangulation."""

    kind: str = field(default="mesh", init=False)
    exact: bool = field(default=False, init=False)


def make_surface(name: str, **params) -> Surface:
    """Factory used by the CLI and configuration layer."""
    name = name.lower()
    if name == "sphere":
        return Sphere(radius=float(params.get("radius", 1.0)))
    if name == "ellipsoid":
        axes = params.get("axes", (1.0, 1.2, 0.8))
        return Ellipsoid(axes_lengths=tuple(float(a) for a in axes))
    if name == "torus":
        return Torus(major=float(params.get("major", 2.0)),
                     minor=float(params.get("minor", 1.0)))
    if name == "plane":
        return PlanePatch()
    if name == "mesh":
        return MeshOnly()
    raise GeometryError(f"unknown surface {name!r}")


# ---------------------------------------------------------------------------
# pointwise chart calculus


@dataclass
class GeomSample:
    """Geometric quantities at one point of the surface."""

    x: np.ndarray
    chart_params: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    nu: np.ndarray
    P: np.ndarray
    B: np.ndarray
    trB: float
    M: np.ndarray
    area_element: float
    chart_name: str = ""


@dataclass
class _Frame:
    jac: np.ndarray       # (3, 2) tangent vectors d_k chi
    hess: np.ndarray      # (3, 2, 2)
    third: np.ndarray     # (3, 2, 2, 2)
    g: np.ndarray
    g_inv: np.ndarray
    lift: np.ndarray      # (3, 2) = jac @ g_inv, maps chart gradients to ambient
    nu: np.ndarray
    dnu: np.ndarray       # (3, 2) chart derivatives of the unit normal
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ChartMetric:
    g: np.ndarray
    g_inv: np.ndarray
    area_element: float


def chart_metric(chart: Chart, y) -> ChartMetric:
    """First fundamental form ``g_kl = d_k chi . d_l chi`` at chart point ``y``."""
    jac = chart.jet(y, 1)[1]
    g = jac.T @ jac
    det = float(np.linalg.det(g))
    if det <= 0.0 or not np.isfinite(det):
        raise GeometryError(f"degenerate metric in chart {chart.name} at {np.asarray(y)}")
    return ChartMetric(g, np.linalg.inv(g), float(np.sqrt(det)))


def _frame(chart: Chart, y) -> _Frame:
    jet = chart.jet(y, 3)
    jac, hess, third = jet[1], jet[2], jet[3]
    g = jac.T @ jac
    det = np.linalg.det(g)
    if det <= 1e-14:
        raise GeometryError(f"degenerate metric in chart {chart.name} at {y}")
    g_inv = np.linalg.inv(g)
    n = np.cross(jac[:, 0], jac[:, 1]) * chart.orientation
    nn = np.linalg.norm(n)
    nu = n / nn
    dnu = np.zeros((3, 2))
    for m in range(2):
        dn = (np.cross(hess[:, 0, m], jac[:, 1]) + np.cross(jac[:, 0], hess[:, 1, m])) * chart.orientation
        dnu[:, m] = (dn - nu * (nu @ dn)) / nn
    return _Frame(jac, hess, third, g, g_inv, jac @ g_inv, nu, dnu)


def _locate(surface: Surface, x, tol: float):
    x = np.asarray(x, dtype=float)
    if not surface.exact:
        raise GeometryError("chart calculus needs an exactly described surface")
    p = surface.closest_point(x[None])[0]
    if np.linalg.norm(p - x) > tol:
        raise ProjectionError(f"point {x} is {np.linalg.norm(p - x):.3e} away from the surface")
    chart, y = surface.select_chart(p)
    return chart, y


def geometry_sample(surface: Surface, x, tol: float = 1e-8) -> GeomSample:
    """Metric, normal, projection and curvature at ``x`` from the chart atlas."""
    chart, y = _locate(surface, x, tol)
    fr = _frame(chart, y)
    proj = np.eye(3) - np.outer(fr.nu, fr.nu)
    # B_ij = D_j nu_i, with D_j = sum_m lift_jm d_m
    shape = fr.dnu @ fr.lift.T
    shape = 0.5 * (shape + shape.T)
    tr = float(np.trace(shape))
    return GeomSample(
        x=np.asarray(x, dtype=float),
        chart_params=y,
        g=fr.g,
        g_inv=fr.g_inv,
        nu=fr.nu,
        P=proj,
        B=shape,
        trB=tr,
        M=tr * shape - shape @ shape,
        area_element=float(np.sqrt(np.linalg.det(fr.g))),
        chart_name=chart.name,
    )


def _chart_field_derivatives(fr: _Frame, grad: np.ndarray, hess: np.ndarray):
    """Chart gradient and Hessian of ``F o chi`` from ambient derivatives of ``F``."""
    d1 = fr.jac.T @ grad
    d2 = fr.jac.T @ hess @ fr.jac + np.einsum("i,ikl->kl", grad, fr.hess)
    return d1, d2


def tangential_gradient(surface: Surface, field, x, tol: float = 1e-8) -> np.ndarray:
    """Tangential gradient ``D v`` of a scalar field at ``x``.

    ``field`` must provide ``grad(x)`` returning the ambient gradient of some
    extension; the chart formula ``D_i v = d_k chi_i g^{kl} d_l v`` only uses
    its restriction to the surface.
    """
    chart, y = _locate(surface, x, tol)
    fr = _frame(chart, y)
    d1 = fr.jac.T @ np.asarray(field.grad(x), dtype=float)
    return fr.lift @ d1


def _lift_derivative(fr: _Frame) -> np.ndarray:
    """Chart derivatives ``d_m lift`` of ``lift = jac g^{-1}``; shape (3, 2, 2)."""
    out = np.zeros((3, 2, 2))
    for m in range(2):
        dj = fr.hess[:, :, m]
        dg = dj.T @ fr.jac + fr.jac.T @ dj
        out[:, :, m] = dj @ fr.g_inv - fr.jac @ fr.g_inv @ dg @ fr.g_inv
    return out


def second_tangential_derivatives(surface: Surface, field, x, tol: float = 1e-8) -> np.ndarray:
    """Matrix ``H[i, j] = D_i (D_j v)`` by nested chart differentiation.

    ``field`` must provide ``grad(x)`` and ``hess(x)`` of an ambient extension.
    """
    chart, y = _locate(surface, x, tol)
    fr = _frame(chart, y)
    d1, d2 = _chart_field_derivatives(fr, np.asarray(field.grad(x), float),
                                      np.asarray(field.hess(x), float))
    dlift = _lift_derivative(fr)
    # chart derivative of w_j = lift_jl d_l v
    dw = np.einsum("jlm,l->jm", dlift, d1) + fr.lift @ d2
    return fr.lift @ dw.T


def commutator_residual(surface: Surface, field, x, tol: float = 1e-8) -> np.ndarray:
    """Residual of the tangential-derivative commutator rule at ``x``.

    Returns ``D_i D_j v - D_j D_i v - ((B grad v)_j nu_i - (B grad v)_i nu_j)``.
    """
    s = geometry_sample(surface, x, tol)
    h = second_tangential_derivatives(surface, field, x, tol)
    bg = s.B @ tangential_gradient(surface, field, x, tol)
    return h - h.T - (np.outer(s.nu, bg) - np.outer(bg, s.nu))


# ---------------------------------------------------------------------------
# ambient polynomial fields used as test data


@dataclass(frozen=True)
class Monomial:
    """Scalar monomial ``x1^a x2^b x3^c`` with exact derivatives."""

    powers: tuple[int, int, int]
    coef: float = 1.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c = self.powers
        return self.coef * x[..., 0] ** a * x[..., 1] ** b * x[..., 2] ** c

    def _d(self, x, orders):
        x = np.asarray(x, dtype=float)
        val = self.coef
        for k in range(3):
            p, o = self.powers[k], orders[k]
            if o > p:
                return np.zeros(x.shape[:-1])
            val = val * (factorial(p) // factorial(p - o)) * x[..., k] ** (p - o)
        return val * np.ones(x.shape[:-1])

    def grad(self, x):
        return np.stack([self._d(x, np.eye(3, dtype=int)[k]) for k in range(3)], axis=-1)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (3, 3))
        for i in range(3):
            for j in range(3):
                o = np.zeros(3, dtype=int)
                o[i] += 1
                o[j] += 1
                out[..., i, j] = self._d(x, o)
        return out


def monomials(max_degree: int) -> list[Monomial]:
    out = []
    for d in range(max_degree + 1):
        for a in range(d, -1, -1):
            for b in range(d - a, -1, -1):
                out.append(Monomial((a, b, d - a - b)))
    return out
