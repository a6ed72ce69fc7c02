"""Pointwise checks of surface-calculus identities.

Every surface is described by an explicit parametrization.  Its Taylor jets
(exact derivatives up to third order) are propagated through the
definitions of the normal, projection, shape operator and tangential
derivatives, so each identity is evaluated from first principles at random
parameter points and independently of the numerical geometry code.

Fields are ambient polynomials of degree at most three composed with the
parametrization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Ellipsoid, PlanePatch, Surface, Torus
from .jets import Jet, cross, dot, matmul, matvec, transpose, values

IDENTITIES = ("normal_part", "bochner_relation", "projection_commutator", "hessian_symmetry")


@dataclass
class IdentityReport:
    identity: str
    surface: str
    n_samples: int
    n_fields: int
    max_residual: float
    mean_residual: float

    def as_dict(self) -> dict:
        return {
            "identity": self.identity,
            "surface": self.surface,
            "n_samples": self.n_samples,
            "n_fields": self.n_fields,
            "max_residual": float(self.max_residual),
            "mean_residual": float(self.mean_residual),
        }


# ---------------------------------------------------------------------------
# parametrizations


def parameter_box(surface: Surface):
    if isinstance(surface, Ellipsoid):
        # keep clear of the coordinate poles
        return (0.15, np.pi - 0.15), (-np.pi, np.pi)
    if isinstance(surface, Torus):
        return (-np.pi, np.pi), (-np.pi, np.pi)
    if isinstance(surface, PlanePatch):
        return (-1.0, 1.0), (-1.0, 1.0)
    raise ValueError(f"no parametrization for surface kind {surface.kind!r}")


def parametrization(surface: Surface, y: np.ndarray) -> list[Jet]:
    """Third-order jets of the embedding at parameter points ``y`` (n, 2)."""
    y1 = Jet.variable(y[:, 0], 0)
    y2 = Jet.variable(y[:, 1], 1)
    if isinstance(surface, Ellipsoid):
        a, b, c = surface.axes_lengths
        s1 = y1.sin()
        return [s1 * y2.cos() * a, s1 * y2.sin() * b, y1.cos() * c]
    if isinstance(surface, Torus):
        R, r = surface.major, surface.minor
        ring = y1.cos() * r + R
        return [ring * y2.cos(), ring * y2.sin(), y1.sin() * r]
    if isinstance(surface, PlanePatch):
        return [y1, y2, Jet.constant(np.zeros(len(y)))]
    raise ValueError(f"no parametrization for surface kind {surface.kind!r}")


@dataclass
class Calculus:
    """Tangential calculus on a parametrized surface, on jets."""

    chi: list
    E: list          # E[i][a]: ambient component i of the lifted gradient of y_a
    nu: list
    P: list
    B: list | None = None
    divB: list | None = None

    @classmethod
    def build(cls, chi) -> "Calculus":
        J1 = [c.partial(0) for c in chi]
        J2 = [c.partial(1) for c in chi]
        g11, g12, g22 = dot(J1, J1), dot(J1, J2), dot(J2, J2)
        inv_det = (g11 * g22 - g12 * g12).reciprocal()
        i11, i12, i22 = g22 * inv_det, -g12 * inv_det, g11 * inv_det
        E = [[J1[i] * i11 + J2[i] * i12, J1[i] * i12 + J2[i] * i22] for i in range(3)]
        n = cross(J1, J2)
        inv_len = dot(n, n).sqrt().reciprocal()
        nu = [c * inv_len for c in n]
        P = [[-(nu[i] * nu[j]) + (1.0 if i == j else 0.0) for j in range(3)] for i in range(3)]
        calc = cls(chi, E, nu, P)
        calc.B = calc.grad(nu)
        calc.divB = calc.div_rows(transpose(calc.B))
        return calc

    def tile(self, reps: int) -> "Calculus":
        def t(x):
            if isinstance(x, Jet):
                return x.tile(reps)
            return [t(v) for v in x]
        return Calculus(t(self.chi), t(self.E), t(self.nu), t(self.P), t(self.B), t(self.divB))

    def D(self, f: Jet) -> list:
        """Tangential gradient of a scalar jet (ambient components)."""
        f1, f2 = f.partial(0), f.partial(1)
        return [self.E[i][0] * f1 + self.E[i][1] * f2 for i in range(3)]

    def grad(self, vec) -> list:
        """``G[i][j] = D_j vec_i``."""
        return [self.D(v) for v in vec]

    def div_rows(self, A) -> list:
        """Row-wise tangential divergence of a matrix field."""
        out = []
        for row in A:
            terms = [self.D(row[j])[j] for j in range(3)]
            out.append(terms[0] + terms[1] + terms[2])
        return out

    def lap(self, vec) -> list:
        """Componentwise Laplace-Beltrami operator."""
        return self.div_rows(self.grad(vec))


def _contract(A, C) -> Jet:
    out = A[0][0] * C[0][0]
    for i in range(3):
        for j in range(3):
            if i or j:
                out = out + A[i][j] * C[i][j]
    return out


# ---------------------------------------------------------------------------
# the identities; each returns (residual, [terms]) as value arrays


def normal_part(calc: Calculus, p) -> tuple:
    u = matvec(calc.P, p)
    lap_u = calc.lap(u)
    bg = _contract(calc.B, calc.grad(u)) * 2.0
    db = dot(calc.divB, u)
    nlap = dot(calc.nu, lap_u)
    res = [calc.nu[i] * (nlap + bg + db) for i in range(3)]
    terms = [[calc.nu[i] * t for i in range(3)] for t in (nlap, bg, db)]
    # the normal part is extracted from the full componentwise Laplacian, so
    # its magnitude sets the round-off scale as well
    return values(res), [values(t) for t in terms] + [values(lap_u)]


def bochner_relation(calc: Calculus, p) -> tuple:
    u = matvec(calc.P, p)
    Gu = calc.grad(u)
    cov = matmul(matmul(calc.P, Gu), calc.P)
    boch = matvec(calc.P, calc.div_rows(cov))
    lap_u = calc.lap(u)
    B2u = matvec(calc.B, matvec(calc.B, u))
    scal = _contract(calc.B, Gu) * 2.0 + dot(calc.divB, u)
    nterm = [calc.nu[i] * scal for i in range(3)]
    res = [boch[i] - (lap_u[i] + B2u[i] + nterm[i]) for i in range(3)]
    return values(res), [values(boch), values(lap_u), values(B2u), values(nterm)]


def projection_commutator(calc: Calculus, p) -> tuple:
    u = matvec(calc.P, p)
    lhs = matvec(calc.P, calc.lap(u))
    t1 = matvec(calc.P, calc.lap(p))
    un = dot(calc.nu, p)
    Pdiv = matvec(calc.P, calc.divB)
    t2 = [Pdiv[i] * un for i in range(3)]
    GN = calc.grad([calc.nu[i] * un for i in range(3)])
    t3 = [c * 2.0 for c in matvec(calc.B, matvec(transpose(GN), calc.nu))]
    res = [lhs[i] - (t1[i] - t2[i] - t3[i]) for i in range(3)]
    return values(res), [values(lhs), values(t1), values(t2), values(t3)]


def hessian_symmetry(calc: Calculus, p) -> tuple:
    tg = matvec(calc.P, calc.D(p[0]))
    H = values(matmul(calc.P, calc.grad(tg)))
    return H - np.swapaxes(H, -1, -2), [H]


_CHECKS = {
    "normal_part": normal_part,
    "bochner_relation": bochner_relation,
    "projection_commutator": projection_commutator,
    "hessian_symmetry": hessian_symmetry,
}


# ---------------------------------------------------------------------------
# field suite and driver


def monomial_powers(max_degree: int = 3) -> list[tuple[int, int, int]]:
    return [(a, b, d - a - b) for d in range(max_degree + 1)
            for a in range(d, -1, -1) for b in range(d - a, -1, -1)]


def _monomial_jets(chi, powers) -> list[Jet]:
    n = chi[0].n
    out = []
    for pw in powers:
        m = Jet.constant(np.ones(n))
        for k in range(3):
            if pw[k]:
                m = m * chi[k] ** pw[k]
        out.append(m)
    return out


def _stack(jets: list[Jet]) -> Jet:
    order = min(j.order for j in jets)
    return Jet(np.concatenate([j.c for j in jets], axis=1), order)


def field_jets(chi, max_degree: int = 3, vector: bool = True) -> tuple[list, int]:
    """Jets of the field suite stacked along the point axis.

    The vector suite is ``m e_c`` for every monomial ``m`` and component
    ``c``; the scalar suite puts the monomials in the first component.
    Returns three component jets of length ``n * n_fields`` and ``n_fields``.
    """
    mons = _monomial_jets(chi, monomial_powers(max_degree))
    zero = Jet.constant(np.zeros(chi[0].n))
    comps: list[list] = [[], [], []]
    for m in mons:
        for c in (range(3) if vector else (0,)):
            for k in range(3):
                comps[k].append(m if k == c else zero)
    return [_stack(c) for c in comps], len(comps[0])


def relative_residual(res: np.ndarray, terms: list[np.ndarray]) -> np.ndarray:
    """Pointwise max-norm residual relative to the largest term at that point."""
    n = res.shape[0]
    r = np.abs(res.reshape(n, -1)).max(axis=1)
    scale = np.max([np.abs(t.reshape(n, -1)).max(axis=1) for t in terms], axis=0)
    floor = 1e-14 * max(1.0, float(scale.max()))
    return r / np.maximum(scale, floor)


def sample_parameters(surface: Surface, n: int, seed: int = 0) -> np.ndarray:
    (a0, a1), (b0, b1) = parameter_box(surface)
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(a0, a1, n), rng.uniform(b0, b1, n)])


def evaluate_identity(surface: Surface, name: str, y: np.ndarray, max_degree: int = 3) -> np.ndarray:
    """Relative residuals of ``name`` for every (field, point) pair, flattened."""
    calc = Calculus.build(parametrization(surface, y))
    vector = name != "hessian_symmetry"
    p, nf = field_jets(calc.chi, max_degree, vector)
    res, terms = _CHECKS[name](calc.tile(nf), p)
    return relative_residual(res, terms)


def check_identities(surface: Surface, n_samples: int = 200, field_suite: int = 3,
                     identities=IDENTITIES, seed: int = 0) -> list[IdentityReport]:
    """Evaluate each identity at random points for every field of the suite.

    ``field_suite`` is the maximal polynomial degree of the ambient fields.
    """
    y = sample_parameters(surface, n_samples, seed)
    reports = []
    for name in identities:
        rel = evaluate_identity(surface, name, y, field_suite)
        reports.append(IdentityReport(name, surface.kind, n_samples, len(rel) // n_samples,
                                      float(rel.max()), float(rel.mean())))
    return reports
