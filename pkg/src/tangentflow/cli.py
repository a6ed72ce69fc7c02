"""Batch front end.

Every run takes a subcommand plus options.  Options can also come from an
INI file given with ``--config``; its sections and keys are listed in
:data:`SCHEMA`, dashes in flag names become underscores, and flags override
the file.  A ``summary.json`` is written to the output directory on every
run, including failed ones.

Exit status: 0 success, 1 configuration error, 2 solver failure, 3 a
``--check`` band was violated.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

COMMANDS = ("solve", "eigs", "decompose", "ns", "convergence", "check-identities", "constants")
_HELP = {
    "solve": "one solve with data --f (or a refinement study with --mms)",
    "eigs": "smallest eigenpairs of a surface operator",
    "decompose": "Helmholtz decomposition of given or random tangential fields",
    "ns": "stationary Navier-Stokes by Picard or Newton iteration",
    "convergence": "manufactured-solution refinement study",
    "check-identities": "pointwise surface calculus identities on random points",
    "constants": "Poincare and inf-sup constants over levels",
}

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _floats(v) -> tuple[float, ...]:
    if isinstance(v, (tuple, list)):
        return tuple(float(a) for a in v)
    return tuple(float(a) for a in str(v).replace(" ", "").split(",") if a)


def parse_levels(v) -> list[int]:
    """``"4"`` means levels 1..4; ``"2,3,5"`` and ``"2-4"`` are explicit."""
    if isinstance(v, (list, tuple)):
        return [int(a) for a in v]
    s = str(v).replace(" ", "")
    if "," in s:
        return [int(a) for a in s.split(",") if a]
    if "-" in s:
        a, b = s.split("-")
        return list(range(int(a), int(b) + 1))
    n = int(s)
    if n < 1:
        raise ConfigError("levels must be positive")
    return list(range(1, n + 1))


# section -> key -> (converter, help)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "out": (str, "output directory"),
        "deterministic": (_bool, "serial reductions and timestamp-free outputs"),
        "check": (_bool, "exit with status 3 if a result falls outside its acceptance band"),
        "threads": (int, "assembly threads (also TANGENTFLOW_NUM_THREADS)"),
    },
    "surface": {
        "surface": (str, "sphere | ellipsoid | torus | mesh"),
        "radius": (float, "sphere radius"),
        "axes": (_floats, "ellipsoid semi-axes a,b,c"),
        "major": (float, "torus major radius"),
        "minor": (float, "torus minor radius"),
        "mesh_file": (str, "OFF or OBJ file (surface = mesh)"),
    },
    "mesh": {
        "base": (str, "icosahedron | octahedron"),
        "level": (int, "refinement level for single solves"),
        "levels": (parse_levels, "levels for studies: N (1..N), a,b,c or a-b"),
    },
    "problem": {
        "problem": (str, "lb | biharmonic | vector | stokes | ns"),
        "operator": (str, "eigs: lb | bochner | hodge | stokes"),
        "variant": (str, "bochner | hodge | surface_diffusion | bochner_weingarten"),
        "degree": (int, "polynomial degree (velocity degree for flow problems)"),
        "mms": (str, "manufactured solution: l1 | l2 | torus (rotation for ns)"),
        "f": (str, "right-hand side expression"),
        "g": (str, "divergence data expression (flow problems)"),
        "field": (str, "decompose: vector field expression"),
        "n_fields": (int, "decompose: number of random fields"),
        "tol": (float, "linear solver tolerance"),
        "k": (int, "number of eigenpairs"),
        "eps": (float, "data scale for the manufactured flow"),
        "method": (str, "picard | newton"),
        "damping": (float, "nonlinear damping factor"),
        "max_nl": (int, "nonlinear iteration limit"),
        "tol_nl": (float, "nonlinear tolerance"),
        "galerkin_modes": (int, "ns: also solve the Galerkin system with this many modes"),
        "samples": (int, "check-identities: random points"),
        "field_degree": (int, "check-identities: maximal polynomial degree"),
        "seed": (int, "random seed"),
        "constant": (str, "constants: poincare | infsup | both"),
        "shift": (float, "zeroth-order shift for vector problems"),
    },
}

DEFAULTS = {
    "out": "tangentflow-out", "deterministic": False, "check": False, "threads": None,
    "surface": "sphere", "radius": 1.0, "axes": (1.0, 1.2, 0.8), "major": 2.0, "minor": 1.0,
    "mesh_file": None, "base": "icosahedron", "level": 3, "levels": [1, 2, 3],
    "problem": "lb", "operator": "lb", "variant": "bochner", "degree": None, "mms": None,
    "f": None, "g": None, "field": None, "n_fields": 20, "tol": 1e-12, "k": 8, "eps": 0.01,
    "method": "picard", "damping": 1.0, "max_nl": 50, "tol_nl": 1e-10, "galerkin_modes": 0,
    "samples": 200, "field_degree": 3, "seed": 0, "constant": "both", "shift": 0.0,
}

_KEY_SECTION = {k: s for s, keys in SCHEMA.items() for k in keys}

# acceptance bands used by --check
BANDS = {
    "lb_l2": (1.8, 2.2),
    "lb_h1": (0.8, 1.2),
    "flow_h1": 1.8,
    "flow_pressure": 1.8,
    "vector_h1": 1.8,
    "identity": 1e-8,
    "eig_rel": 0.03,
    "poincare_rel": 0.03,
    "infsup_min": 0.1,
    "infsup_drop": 0.05,
    "helmholtz_reconstruction": 1e-8,
    "helmholtz_orthogonality": 1e-10,
    "leray_idempotence": 1e-8,
    "picard_ratio": 0.2,
    "picard_iterations": 6,
    "galerkin_rel": 0.05,
}


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["options"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def out_dir(self) -> Path:
        return Path(self.options["out"])


def read_config_file(path) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    out = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            k = key.replace("-", "_")
            if k == "command" and section == "run":
                out["command"] = raw.strip()
                continue
            if k not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            out[k] = raw
    return out


def _convert(options: dict) -> dict:
    res = {}
    for k, v in options.items():
        if k == "command":
            continue
        if k not in _KEY_SECTION:
            raise ConfigError(f"unknown option {k!r}")
        if v is None:
            res[k] = None
            continue
        conv = SCHEMA[_KEY_SECTION[k]][k][0]
        try:
            res[k] = conv(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
    return res


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI run configuration")
    for section, keys in SCHEMA.items():
        grp = common.add_argument_group(section)
        for key, (conv, hlp) in keys.items():
            flag = "--" + key.replace("_", "-")
            if conv is _bool:
                grp.add_argument(flag, dest=key, action="store_const", const=True,
                                 default=argparse.SUPPRESS, help=hlp)
                grp.add_argument("--no-" + key.replace("_", "-"), dest=key, action="store_const",
                                 const=False, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
            else:
                grp.add_argument(flag, dest=key, default=argparse.SUPPRESS, help=hlp)
    parser = _Parser(prog="tangentflow", description="Geometric PDE solvers on closed surfaces.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in COMMANDS:
        sub.add_parser(cmd, parents=[common], help=_HELP[cmd])
    return parser


def resolve_config(argv) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    opts = dict(DEFAULTS)
    if "config" in ns:
        fileopts = read_config_file(ns.pop("config"))
        fcmd = fileopts.pop("command", None)
        if fcmd is not None and fcmd != command:
            raise ConfigError(f"config file is for {fcmd!r}, not {command!r}")
        opts.update(_convert(fileopts))
    opts.update(_convert(ns))
    return RunConfig(command, opts)


# ---------------------------------------------------------------------------
# helpers shared by the commands


def _surface(cfg: RunConfig):
    from .geometry import make_surface
    name = cfg.surface.lower()
    if name == "mesh":
        if not cfg.mesh_file:
            raise ConfigError("surface = mesh needs mesh_file")
        return make_surface("mesh")
    return make_surface(name, radius=cfg.radius, axes=cfg.axes, major=cfg.major, minor=cfg.minor)


def _mesh(cfg: RunConfig, surface, level: int | None = None):
    from .mesh import build_mesh, load_mesh, refine
    lvl = cfg.level if level is None else level
    if cfg.mesh_file:
        m = load_mesh(cfg.mesh_file, surface if surface.exact else None)
        for _ in range(lvl):
            m = refine(m, project=surface.exact)
        return m
    if cfg.base not in ("icosahedron", "octahedron"):
        raise ConfigError(f"unknown base mesh {cfg.base!r}")
    return build_mesh(surface, lvl, cfg.base)


def _expr(text, surface, what):
    from .expr import ExpressionError, compile_expression
    if text is None:
        raise ConfigError(f"option {what} is required")
    try:
        return compile_expression(text, surface)
    except ExpressionError as exc:
        raise ConfigError(f"{what}: {exc}") from None


class Outcome:
    """Collects the summary and the band checks of a run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.summary: dict = {"command": cfg.command}
        self.checks: dict = {}

    def check(self, name: str, ok: bool, detail=None) -> None:
        self.checks[name] = {"pass": bool(ok), "detail": detail}

    @property
    def violated(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v["pass"]]


def _sphere_radius(surface):
    from .geometry import Sphere
    return surface.radius if isinstance(surface, Sphere) else None


# ---------------------------------------------------------------------------
# commands


def cmd_study(cfg: RunConfig, out: Outcome) -> None:
    from .verify.convergence import ProblemConfig, convergence_study
    problem = cfg.problem
    mms = cfg.mms or ("torus" if cfg.surface == "torus" else "l1")
    params = {}
    if cfg.surface == "sphere":
        params = {"radius": cfg.radius}
    elif cfg.surface == "torus":
        params = {"major": cfg.major, "minor": cfg.minor}
    elif cfg.surface == "ellipsoid":
        raise ConfigError("manufactured solutions are available on the sphere and the torus")
    pc = ProblemConfig(problem, cfg.surface, params, mms, cfg.degree, cfg.variant, cfg.eps,
                       cfg.base, cfg.tol)
    if len(cfg.levels) < 2:
        raise ConfigError("a study needs at least two levels")
    try:
        table = convergence_study(pc, cfg.levels)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    table.write_csv(cfg.out_dir / "convergence.csv")
    out.summary["convergence"] = table.as_dict()
    if not table.all_converged:
        bad = [r.level for r in table.rows if not r.converged]
        out.summary["failed_levels"] = bad
    o2, o1 = table.orders("error_l2"), table.orders("error_h1")
    if problem == "lb":
        lo, hi = BANDS["lb_l2"]
        out.check("l2_order", bool(len(o2)) and lo <= o2[-1] <= hi, float(o2[-1]))
        lo, hi = BANDS["lb_h1"]
        out.check("h1_order", bool(len(o1)) and lo <= o1[-1] <= hi, float(o1[-1]))
    elif problem in ("stokes", "ns"):
        op = table.orders("pressure_l2")
        out.check("velocity_h1_order", o1[-1] >= BANDS["flow_h1"], float(o1[-1]))
        out.check("pressure_l2_order", op[-1] >= BANDS["flow_pressure"], float(op[-1]))
    elif problem == "vector":
        out.check("h1_order", o1[-1] >= BANDS["vector_h1"], float(o1[-1]))
    if not table.all_converged:
        out.check("all_levels_converged", False)


def cmd_solve(cfg: RunConfig, out: Outcome) -> None:
    if cfg.mms:
        cmd_study(cfg, out)
        return
    from . import solvers
    from .mesh import write_off
    from .output import write_vtk
    surface = _surface(cfg)
    mesh = _mesh(cfg, surface)
    f = _expr(cfg.f, surface, "f")
    data = {}
    p = cfg.problem
    if p in ("lb", "biharmonic"):
        deg = cfg.degree or 1
        if p == "lb":
            sol = solvers.solve_laplace_beltrami(mesh, f, deg, cfg.tol)
        else:
            sol, _ = solvers.solve_biharmonic(mesh, f, deg, cfg.tol)
        data["u"] = sol.space.expand(sol.coeffs)
        out.summary.update(n_dofs=sol.space.n_dofs, iterations=sol.report.iterations,
                           residual=sol.report.residual)
    elif p == "vector":
        sol = solvers.solve_vector_laplace(mesh, f, cfg.variant, cfg.degree or 2, cfg.shift, cfg.tol)
        data["u"] = sol.space.expand(sol.coeffs)
        out.summary.update(n_dofs=sol.space.n_dofs, iterations=sol.report.iterations,
                           residual=sol.report.residual, variant=cfg.variant)
    elif p == "stokes":
        g = _expr(cfg.g, surface, "g") if cfg.g else None
        st = solvers.StokesSystem(mesh, cfg.degree or 2, 1)
        sol = st.solve(f, g, cfg.tol)
        data["u"] = st.V.expand(sol.u)
        data["p"] = sol.p
        out.summary.update(n_dofs=st.nv + st.np_, iterations=sol.report.iterations,
                           residual=sol.report.residual,
                           divergence_residual=float(abs(st.B.matvec(sol.u)).max()))
    else:
        raise ConfigError(f"solve does not handle problem {p!r} (use ns for Navier-Stokes)")
    out.summary.update(problem=p, level=cfg.level, n_triangles=mesh.n_triangles, h=mesh.mesh_size())
    write_vtk(cfg.out_dir / "solution.vtk", mesh.vertices, mesh.triangles, data, cfg.deterministic)
    write_off(mesh, cfg.out_dir / "mesh.off")


def sphere_spectrum(operator: str, k: int, radius: float = 1.0) -> list[float]:
    """Exact lowest ``k`` eigenvalues on a round sphere, with multiplicity."""
    vals: list[float] = []
    ell = 1
    while len(vals) < k:
        lam = ell * (ell + 1)
        if operator == "lb":
            vals += [lam] * (2 * ell + 1)
        elif operator == "bochner":
            vals += [lam - 1] * (2 * (2 * ell + 1))
        elif operator == "hodge":
            vals += [lam] * (2 * (2 * ell + 1))
        elif operator == "stokes":
            vals += [lam - 1] * (2 * ell + 1)
        else:
            raise ConfigError(f"unknown operator {operator!r}")
        ell += 1
    return [v / radius ** 2 for v in vals[:k]]


def cmd_eigs(cfg: RunConfig, out: Outcome) -> None:
    import numpy as np

    from . import solvers
    from .linalg.eigen import eigs_smallest, group_clusters
    from .output import write_csv
    surface = _surface(cfg)
    mesh = _mesh(cfg, surface)
    op = cfg.operator
    if op == "lb":
        lap = solvers.ScalarLaplace(mesh, cfg.degree or 1)
        pairs = eigs_smallest(lap.K, lap.M, cfg.k, 1e-9, kernel=lap.ones, seed=cfg.seed)
    elif op in ("bochner", "hodge"):
        vl = solvers.VectorLaplace(mesh, op, cfg.degree or 2)
        pairs = eigs_smallest(vl.A, vl.M, cfg.k, 1e-9, seed=cfg.seed)
    elif op == "stokes":
        st = solvers.StokesSystem(mesh, cfg.degree or 2, 1)
        pairs = solvers.stokes_eigs(st, cfg.k, 1e-9, cfg.seed)
        div = [float(np.linalg.norm(st.B.matvec(pairs.vectors[:, j]))) for j in range(cfg.k)]
        out.summary["max_divergence"] = max(div)
    else:
        raise ConfigError(f"unknown operator {op!r}; choose lb, bochner, hodge or stokes")
    vals = np.asarray(pairs.values[: cfg.k])
    clusters = group_clusters(vals, 1e-3)
    cid = []
    for v in vals:
        cid.append(next(i for i, (c, _) in enumerate(clusters) if abs(v - c) <= 1e-3 * abs(c)))
    write_csv(cfg.out_dir / "eigenvalues.csv", ["index", "value", "residual", "cluster"],
              [(i, v, r, c) for i, (v, r, c) in enumerate(zip(vals, pairs.residuals[: cfg.k], cid))])
    write_csv(cfg.out_dir / "clusters.csv", ["cluster", "value", "multiplicity"],
              [(i, c, m) for i, (c, m) in enumerate(clusters)])
    out.summary.update(operator=op, level=cfg.level, eigenvalues=vals,
                       clusters=[{"value": c, "multiplicity": m} for c, m in clusters],
                       converged=pairs.converged, max_residual=float(np.max(pairs.residuals)))
    R = _sphere_radius(surface)
    if R is not None:
        exact = np.array(sphere_spectrum(op, len(vals), R))
        rel = float(np.max(np.abs(vals - exact) / exact))
        out.summary["max_relative_error"] = rel
        out.check("sphere_spectrum", rel <= BANDS["eig_rel"], rel)
    out.check("positive_nondecreasing", bool(np.all(vals > 0) and np.all(np.diff(vals) >= -1e-10)))


def helmholtz_metrics(st, v, res) -> dict:
    import numpy as np
    vn2 = st.Mv.quad(v)
    rec = np.sqrt(max(st.Mv.quad(v - res.divergence_free - res.gradient), 0.0)) / np.sqrt(vn2)
    orth = abs(res.divergence_free @ st.Mv.matvec(res.gradient)) / vn2
    h2 = st.leray(res.divergence_free)
    idem = np.sqrt(max(st.Mv.quad(h2 - res.divergence_free), 0.0)) / np.sqrt(vn2)
    return {"reconstruction": float(rec), "orthogonality": float(orth), "idempotence": float(idem),
            "divergence": float(np.linalg.norm(st.B.matvec(res.divergence_free)))}


def cmd_decompose(cfg: RunConfig, out: Outcome) -> None:
    import numpy as np

    from . import solvers
    from .output import write_csv, write_vtk
    surface = _surface(cfg)
    mesh = _mesh(cfg, surface)
    st = solvers.StokesSystem(mesh, cfg.degree or 2, 1)
    rows = []
    if cfg.field:
        f = _expr(cfg.field, surface, "field")
        fields = [("field", st.V.interpolate(f))]
    else:
        rng = np.random.default_rng(cfg.seed)
        fields = [(f"random{i}", rng.standard_normal(st.nv)) for i in range(cfg.n_fields)]
    worst = {"reconstruction": 0.0, "orthogonality": 0.0, "idempotence": 0.0}
    for name, v in fields:
        res = st.helmholtz(v)
        m = helmholtz_metrics(st, v, res)
        rows.append((name, m["reconstruction"], m["orthogonality"], m["idempotence"], m["divergence"]))
        for key in worst:
            worst[key] = max(worst[key], m[key])
        if cfg.field:
            write_vtk(cfg.out_dir / "decomposition.vtk", mesh.vertices, mesh.triangles,
                      {"v": st.V.expand(v), "divergence_free": st.V.expand(res.divergence_free),
                       "gradient": st.V.expand(res.gradient), "potential": res.potential},
                      cfg.deterministic)
    write_csv(cfg.out_dir / "decomposition.csv",
              ["field", "reconstruction", "orthogonality", "idempotence", "divergence"], rows)
    out.summary.update(level=cfg.level, n_fields=len(fields), **worst)
    out.check("reconstruction", worst["reconstruction"] <= BANDS["helmholtz_reconstruction"], worst["reconstruction"])
    out.check("orthogonality", worst["orthogonality"] <= BANDS["helmholtz_orthogonality"], worst["orthogonality"])
    out.check("idempotence", worst["idempotence"] <= BANDS["leray_idempotence"], worst["idempotence"])


def cmd_ns(cfg: RunConfig, out: Outcome) -> None:
    import numpy as np

    from . import solvers
    from .output import write_csv, write_vtk
    from .verify import fields as F
    surface = _surface(cfg)
    mesh = _mesh(cfg, surface)
    st = solvers.StokesSystem(mesh, cfg.degree or 2, 1)
    exact = None
    if cfg.f:
        f = _expr(cfg.f, surface, "f")
    else:
        if _sphere_radius(surface) != 1.0:
            raise ConfigError("the built-in Navier-Stokes data need the unit sphere; give f instead")
        exact = F.stokes_sphere_mms(surface, cfg.eps, convective=True)
        f = exact.force
    g = _expr(cfg.g, surface, "g") if cfg.g else None
    res = solvers.navier_stokes(st, f, g, cfg.method, cfg.tol_nl, cfg.max_nl, cfg.damping)
    rows = []
    for i, inc in enumerate(res.increments):
        ratio = res.ratios[i - 1] if i >= 1 else float("nan")
        rows.append((i + 1, inc, ratio, res.residuals[i]))
    write_csv(cfg.out_dir / "iterations.csv", ["iteration", "increment", "ratio", "residual"], rows)
    info = res.as_dict()
    if cfg.deterministic:
        info.pop("wall_time", None)
    out.summary.update(level=cfg.level, eps=cfg.eps, **info)
    if exact is not None:
        l2, h1 = F.vector_errors(st.V, res.u, exact.velocity)
        out.summary.update(velocity_error_l2=l2, velocity_error_h1=h1)
    write_vtk(cfg.out_dir / "solution.vtk", mesh.vertices, mesh.triangles,
              {"u": st.V.expand(res.u), "p": res.p}, cfg.deterministic)
    if cfg.galerkin_modes:
        gal = solvers.galerkin_navier_stokes(st, f, cfg.galerkin_modes)
        diff = st.h1_norm(gal.u - res.u) / st.h1_norm(res.u)
        out.summary["galerkin"] = {"modes": cfg.galerkin_modes, "relative_h1_difference": diff,
                                   "iterations": gal.iterations}
        out.check("galerkin_agreement", diff <= BANDS["galerkin_rel"], diff)
    ratios = np.asarray(res.ratios)
    out.check("contraction", bool(np.all(ratios < BANDS["picard_ratio"])), ratios)
    out.check("iterations", res.iterations <= BANDS["picard_iterations"], res.iterations)


def cmd_identities(cfg: RunConfig, out: Outcome) -> None:
    from .output import write_csv
    from .verify.identities import check_identities
    surface = _surface(cfg)
    if not surface.exact:
        raise ConfigError("identity checks need an analytic surface")
    try:
        reports = check_identities(surface, cfg.samples, cfg.field_degree, seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_csv(cfg.out_dir / "identities.csv",
              ["identity", "surface", "n_samples", "n_fields", "max_residual", "mean_residual"],
              [(r.identity, r.surface, r.n_samples, r.n_fields, r.max_residual, r.mean_residual)
               for r in reports])
    worst = max(r.max_residual for r in reports)
    out.summary.update(surface=surface.kind, identities=[r.as_dict() for r in reports], max_residual=worst)
    out.check("identities", worst <= BANDS["identity"], worst)


def cmd_constants(cfg: RunConfig, out: Outcome) -> None:
    from .output import write_csv
    from .verify.constants import estimate_infsup, estimate_poincare
    if cfg.constant not in ("poincare", "infsup", "both"):
        raise ConfigError(f"unknown constant {cfg.constant!r}")
    surface = _surface(cfg)
    rows, pvals, bvals = [], [], []
    for lvl in cfg.levels:
        mesh = _mesh(cfg, surface, lvl)
        pc = estimate_poincare(mesh, cfg.degree or 2) if cfg.constant != "infsup" else float("nan")
        beta = estimate_infsup(mesh, cfg.degree or 2, 1) if cfg.constant != "poincare" else float("nan")
        rows.append((lvl, mesh.mesh_size(), pc, beta))
        pvals.append(pc)
        bvals.append(beta)
    write_csv(cfg.out_dir / "constants.csv", ["level", "h", "poincare", "infsup"], rows)
    out.summary.update(levels=cfg.levels, poincare=pvals, infsup=bvals)
    R = _sphere_radius(surface)
    if cfg.constant != "infsup" and R is not None:
        rel = abs(pvals[-1] * R ** 2 - 1.0)
        out.check("poincare", rel <= BANDS["poincare_rel"], rel)
    if cfg.constant != "poincare":
        out.check("infsup_lower_bound", min(bvals) >= BANDS["infsup_min"], min(bvals))
        drops = [1 - b / a for a, b in zip(bvals[:-1], bvals[1:])]
        out.check("infsup_stable", all(d <= BANDS["infsup_drop"] for d in drops), drops)


HANDLERS = {
    "solve": cmd_solve,
    "eigs": cmd_eigs,
    "decompose": cmd_decompose,
    "ns": cmd_ns,
    "convergence": cmd_study,
    "check-identities": cmd_identities,
    "constants": cmd_constants,
}


def run(cfg: RunConfig) -> int:
    """Execute a resolved configuration; returns the exit status."""
    from . import assemble
    from .geometry import GeometryError
    from .linalg.krylov import SolverError
    from .mesh import MeshError
    from .output import write_json

    if cfg.threads:
        os.environ["TANGENTFLOW_NUM_THREADS"] = str(cfg.threads)
    assemble.set_deterministic(cfg.deterministic)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out = Outcome(cfg)
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        HANDLERS[cfg.command](cfg, out)
    except (ConfigError, GeometryError, MeshError) as exc:
        status = EXIT_CONFIG
        out.summary["error"] = str(exc)
    except SolverError as exc:
        status = EXIT_SOLVER
        out.summary["error"] = str(exc)
    if status == EXIT_OK and cfg.check and out.violated:
        status = EXIT_CHECK
    out.summary["status"] = status
    out.summary["checks"] = out.checks
    out.summary["options"] = {k: v for k, v in sorted(cfg.options.items()) if k != "out"}
    if not cfg.deterministic:
        out.summary["wall_time"] = time.perf_counter() - t0
    write_json(cfg.out_dir / "summary.json", out.summary)
    if "error" in out.summary:
        print(f"error: {out.summary['error']}", file=sys.stderr)
    elif status == EXIT_CHECK:
        print(f"acceptance bands violated: {', '.join(out.violated)}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = resolve_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _config_failure_summary(argv, str(exc))
        return EXIT_CONFIG
    return run(cfg)


def _config_failure_summary(argv, message: str) -> None:
    """Best effort: record a rejected configuration in ``--out`` if it was given."""
    out = None
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            out = argv[i + 1]
        elif a.startswith("--out="):
            out = a.split("=", 1)[1]
    if out is None:
        return
    from .output import write_json
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_json(Path(out) / "summary.json", {"status": EXIT_CONFIG, "error": message})
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
