"""Manufactured-solution refinement studies."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .. import solvers
from ..geometry import Sphere, Surface, Torus, make_surface
from ..linalg.krylov import SolverError
from ..mesh import build_mesh
from . import fields as F

PROBLEMS = ("lb", "vector", "stokes", "ns", "biharmonic")


@dataclass
class ProblemConfig:
    """What to solve in a refinement study.

    ``mms`` picks the exact solution: ``l1`` (degree-one harmonic, or the
    rotation field for vector problems), ``l2`` (degree-two harmonic or the
    rotated gradient of ``x1 x2``) or ``torus`` for the angle-based field.
    """

    problem: str = "lb"
    surface: str = "sphere"
    surface_params: dict = field(default_factory=dict)
    mms: str = "l1"
    degree: int | None = None
    variant: str = "bochner"
    eps: float = 0.01
    base: str = "icosahedron"
    tol: float = 1e-12

    def make_surface(self) -> Surface:
        return make_surface(self.surface, **self.surface_params)


@dataclass
class ConvergenceRow:
    level: int
    h: float
    n_dofs: int
    error_l2: float
    error_h1: float
    extra: dict = field(default_factory=dict)
    converged: bool = True
    message: str = ""


@dataclass
class ConvergenceTable:
    problem: str
    rows: list[ConvergenceRow] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        if name in ("error_l2", "error_h1", "h"):
            return np.array([getattr(r, name) for r in self.rows], dtype=float)
        return np.array([r.extra.get(name, np.nan) for r in self.rows], dtype=float)

    def orders(self, name: str = "error_l2") -> np.ndarray:
        """Observed orders ``log(e_k/e_{k+1}) / log(h_k/h_{k+1})`` between consecutive rows."""
        e = self.column(name)
        h = self.column("h")
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])

    def ratios(self, name: str = "error_l2") -> np.ndarray:
        e = self.column(name)
        return e[1:] / e[:-1]

    @property
    def extra_names(self) -> list[str]:
        names: list[str] = []
        for r in self.rows:
            names.extend(k for k in r.extra if k not in names)
        return names

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)

    def as_dict(self) -> dict:
        out = {"problem": self.problem, "rows": []}
        cols = ["error_l2", "error_h1"] + self.extra_names
        ords = {c: self.orders(c) for c in cols}
        for i, r in enumerate(self.rows):
            row = {"level": r.level, "h": r.h, "n_dofs": r.n_dofs, "error_l2": r.error_l2,
                   "error_h1": r.error_h1, "converged": r.converged}
            row.update(r.extra)
            for c in cols:
                row[f"order_{c}"] = None if i == 0 or not np.isfinite(ords[c][i - 1]) else float(ords[c][i - 1])
            if r.message:
                row["message"] = r.message
            out["rows"].append(row)
        return out

    def write_csv(self, path) -> None:
        cols = ["level", "h", "n_dofs", "error_l2", "error_h1"] + self.extra_names
        ocols = ["error_l2", "error_h1"] + self.extra_names
        ords = {c: self.orders(c) for c in ocols}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols + [f"order_{c}" for c in ocols] + ["converged"])
            for i, r in enumerate(self.rows):
                vals = [r.level, _fmt(r.h), r.n_dofs, _fmt(r.error_l2), _fmt(r.error_h1)]
                vals += [_fmt(r.extra.get(c, math.nan)) for c in self.extra_names]
                vals += ["" if i == 0 else _fmt(ords[c][i - 1]) for c in ocols]
                vals.append(int(r.converged))
                w.writerow(vals)


def _fmt(v) -> str:
    return "nan" if v is None or not np.isfinite(v) else f"{float(v):.10e}"


# ---------------------------------------------------------------------------


def _scalar_exact(surface, mms):
    if isinstance(surface, Torus) or mms == "torus":
        return F.torus_mms(surface)
    return F.sphere_x1x2(surface) if mms == "l2" else F.sphere_x3(surface)


def _solve_level(cfg: ProblemConfig, surface: Surface, level: int) -> ConvergenceRow:
    mesh = build_mesh(surface, level, cfg.base)
    h = mesh.mesh_size()
    if cfg.problem == "lb":
        ex = _scalar_exact(surface, cfg.mms)
        sol = solvers.solve_laplace_beltrami(mesh, ex.laplacian, cfg.degree or 1, cfg.tol)
        l2, h1 = F.scalar_errors(sol.space, sol.coeffs, ex, subtract_mean=True)
        return ConvergenceRow(level, h, sol.space.n_dofs, l2, h1)
    if cfg.problem == "biharmonic":
        ex = _scalar_exact(surface, cfg.mms)
        if not isinstance(surface, Sphere):
            raise ValueError("the biharmonic study uses spherical harmonics on a sphere")
        lam = 2.0 if cfg.mms != "l2" else 6.0
        R = surface.radius
        sol, _ = solvers.solve_biharmonic(mesh, lambda x: (lam / R ** 2) ** 2 * ex.value(x),
                                          cfg.degree or 1, cfg.tol)
        l2, h1 = F.scalar_errors(sol.space, sol.coeffs, ex, subtract_mean=True)
        return ConvergenceRow(level, h, sol.space.n_dofs, l2, h1)
    if cfg.problem == "vector":
        if cfg.mms == "l2":
            ex, lam = F.curl_quadratic(surface), 5.0
        else:
            ex, lam = F.rotation_field(surface), 1.0
        if cfg.variant == "hodge":
            lam += 1.0
        sol = solvers.solve_vector_laplace(mesh, lambda x: lam * ex.value(x), cfg.variant,
                                           cfg.degree or 2, tol=cfg.tol)
        l2, h1 = F.vector_errors(sol.space, sol.coeffs, ex)
        return ConvergenceRow(level, h, sol.space.n_dofs, l2, h1)
    if cfg.problem in ("stokes", "ns"):
        conv = cfg.problem == "ns"
        mms = F.stokes_sphere_mms(surface, cfg.eps if conv else 1.0, conv)
        st = solvers.StokesSystem(mesh, cfg.degree or 2, 1)
        extra = {}
        if conv:
            res = solvers.navier_stokes(st, mms.force, tol=1e-10)
            u, p = res.u, res.p
            extra["nonlinear_iterations"] = res.iterations
        else:
            sol = st.solve(mms.force, tol=cfg.tol)
            u, p = sol.u, sol.p
        l2, h1 = F.vector_errors(st.V, u, mms.velocity)
        pl2, _ = F.scalar_errors(st.Q, p, mms.pressure, subtract_mean=True)
        extra["pressure_l2"] = pl2
        return ConvergenceRow(level, h, st.nv + st.np_, l2, h1, extra)
    raise ValueError(f"unknown problem {cfg.problem!r}; choose from {PROBLEMS}")


def convergence_study(cfg: ProblemConfig, levels) -> ConvergenceTable:
    """Solve on each level and tabulate errors; a failed level is flagged, not fatal."""
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two levels")
    surface = cfg.make_surface()
    table = ConvergenceTable(cfg.problem)
    for level in levels:
        try:
            row = _solve_level(cfg, surface, level)
        except SolverError as exc:
            mesh = build_mesh(surface, level, cfg.base)
            row = ConvergenceRow(level, mesh.mesh_size(), 0, math.nan, math.nan,
                                 converged=False, message=str(exc))
        table.rows.append(row)
    hs = table.column("h")
    if np.any(np.diff(hs) >= 0):
        raise ValueError("levels must give strictly decreasing mesh sizes")
    return table
