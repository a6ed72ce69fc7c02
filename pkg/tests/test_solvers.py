import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tangentflow import assemble as asm
from tangentflow import solvers as S
from tangentflow.expr import compile_expression
from tangentflow.geometry import Sphere, Torus
from tangentflow.linalg.krylov import SolverError
from tangentflow.mesh import build_mesh
from tangentflow.verify import fields as F
from tangentflow.verify.convergence import ProblemConfig, convergence_study

SPH = Sphere()
FORCE_TEXT = "P([x2*x3 + 0.3*x1, x1**2 - x3, x1*x2*x3 + 0.2])"


def _orders(errs, hs):
    errs, hs = np.asarray(errs), np.asarray(hs)
    return np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])


@pytest.fixture(scope="module")
def stokes2():
    return S.StokesSystem(build_mesh(SPH, 2))


@pytest.fixture(scope="module")
def stokes_op2(stokes2):
    op = S.StokesOperator(stokes2)
    op.eigs(20)
    return op


# -- Laplace-Beltrami

def test_lb_zero_data():
    sol = S.solve_laplace_beltrami(build_mesh(SPH, 2), lambda x: np.zeros(len(x)))
    assert np.all(sol.coeffs == 0)


@pytest.mark.parametrize("constraint", ["deflation", "multiplier"])
def test_lb_sphere_x3(constraint):
    ex = F.sphere_x3(SPH)
    errs, hs = [], []
    for lvl in (1, 2, 3, 4):
        mesh = build_mesh(SPH, lvl)
        sol = S.solve_laplace_beltrami(mesh, lambda x: 2 * x[:, 2], 1, constraint=constraint)
        errs.append(F.scalar_errors(sol.space, sol.coeffs, ex, True)[0])
        hs.append(mesh.mesh_size())
        assert abs(sol.space.mesh.n_vertices and np.sum(asm.scalar_mass(sol.space).matvec(sol.coeffs))) < 1e-10
    assert np.all(_orders(errs, hs) >= 1.9)


def test_lb_nonzero_mean_warns():
    with pytest.warns(UserWarning, match="nonzero mean"):
        sol = S.solve_laplace_beltrami(build_mesh(SPH, 1), lambda x: 1.0 + 2 * x[:, 2])
    ref = S.solve_laplace_beltrami(build_mesh(SPH, 1), lambda x: 2 * x[:, 2])
    assert_allclose(sol.coeffs, ref.coeffs, atol=1e-10)


def test_lb_torus_manufactured_solution():
    t = convergence_study(ProblemConfig("lb", "torus", {"major": 2.0, "minor": 1.0}), [1, 2, 3])
    assert np.all(t.orders("error_l2") >= 1.8)
    assert np.all(t.orders("error_h1") >= 0.9)


def test_torus_mms_data_matches_finite_differences():
    # chart formula on the (2, 1) torus, metric diag(r^2, rho^2), rho = R + r cos(theta)
    R, r = 2.0, 1.0
    tor = Torus(R, r)
    ex = F.torus_mms(tor)
    rng = np.random.default_rng(4)
    th, ph = rng.uniform(-np.pi, np.pi, (2, 40))

    def emb(t, p):
        return np.column_stack([(R + r * np.cos(t)) * np.cos(p), (R + r * np.cos(t)) * np.sin(p), r * np.sin(t)])

    def u(t, p):
        return ex.value(emb(t, p))

    d = 1e-4
    ut = (u(th + d, ph) - u(th - d, ph)) / (2 * d)
    up = (u(th, ph + d) - u(th, ph - d)) / (2 * d)
    g = ex.tangential_grad(emb(th, ph))
    x_t = (emb(th + d, ph) - emb(th - d, ph)) / (2 * d)
    x_p = (emb(th, ph + d) - emb(th, ph - d)) / (2 * d)
    assert_allclose(np.sum(g * x_t, axis=1), ut, atol=1e-7)
    assert_allclose(np.sum(g * x_p, axis=1), up, atol=1e-7)

    def flux_t(t, p):
        rho = R + r * np.cos(t)
        return r * rho / r ** 2 * (u(t + d, p) - u(t - d, p)) / (2 * d)

    def flux_p(t, p):
        rho = R + r * np.cos(t)
        return r * rho / rho ** 2 * (u(t, p + d) - u(t, p - d)) / (2 * d)

    rho = R + r * np.cos(th)
    lap = ((flux_t(th + d, ph) - flux_t(th - d, ph)) / (2 * d)
           + (flux_p(th, ph + d) - flux_p(th, ph - d)) / (2 * d)) / (r * rho)
    assert_allclose(ex.laplacian(emb(th, ph)), -lap, atol=1e-5)


# -- vector Laplacians and biharmonic problems

def test_vector_zero_data():
    sol = S.solve_vector_laplace(build_mesh(SPH, 1), lambda x: np.zeros_like(x))
    assert np.all(sol.coeffs == 0)


@pytest.mark.parametrize("variant, lam", [("bochner", 1.0), ("hodge", 2.0)])
def test_vector_rotation_field(variant, lam):
    ex = F.rotation_field(SPH)
    errs, hs = [], []
    for lvl in (1, 2, 3):
        mesh = build_mesh(SPH, lvl)
        sol = S.solve_vector_laplace(mesh, lambda x: lam * ex.value(x), variant, 2)
        errs.append(F.vector_errors(sol.space, sol.coeffs, ex)[0])
        hs.append(mesh.mesh_size())
    assert np.all(_orders(errs, hs) >= 1.9)


def test_surface_diffusion_agrees_with_bochner_weingarten_on_divergence_free_field():
    # for div-free fields grad-div drops out; on the unit sphere W = P so the
    # eigenvalue of the degree-two rotated gradient drops from 5 to 4
    ex = F.curl_quadratic(SPH)
    gaps, errs, hs = [], [], []
    for lvl in (1, 2, 3):
        mesh = build_mesh(SPH, lvl)
        a = S.solve_vector_laplace(mesh, lambda x: 5.0 * ex.value(x), "surface_diffusion", 2, shift=1.0)
        b = S.solve_vector_laplace(mesh, lambda x: 5.0 * ex.value(x), "bochner_weingarten", 2, shift=1.0)
        gaps.append(F.vector_norms(a.space, a.coeffs - b.coeffs)[0])
        errs.append(F.vector_errors(a.space, a.coeffs, ex)[0])
        hs.append(mesh.mesh_size())
    assert np.all(np.array(gaps) <= np.array(hs))
    assert np.all(np.diff(gaps) < 0)
    assert np.all(_orders(errs, hs) >= 1.9)


def test_unknown_variant():
    with pytest.raises(ValueError, match="variant"):
        S.VectorLaplace(build_mesh(SPH, 1), "stokes")


def test_biharmonic_zero_and_x3():
    mesh = build_mesh(SPH, 3)
    sol0, _ = S.solve_biharmonic(mesh, lambda x: np.zeros(len(x)))
    assert np.all(sol0.coeffs == 0)
    ex = F.sphere_x3(SPH)
    errs, hs = [], []
    for lvl in (2, 3, 4):
        mesh = build_mesh(SPH, lvl)
        sol, w = S.solve_biharmonic(mesh, lambda x: 4 * x[:, 2])
        errs.append(F.scalar_errors(sol.space, sol.coeffs, ex, True)[0])
        hs.append(mesh.mesh_size())
    assert np.all(_orders(errs, hs) >= 1.8)
    # the auxiliary variable is Laplace u = -2 x3
    assert F.scalar_errors(sol.space, w, F.sphere_x3(SPH))[0] > 0
    assert_allclose(w, -2 * sol.space.interpolate(lambda x: x[:, 2]), atol=5e-3)


def test_vector_biharmonic_rotation_field():
    ex = F.rotation_field(SPH)
    errs, hs = [], []
    for lvl in (1, 2, 3):
        mesh = build_mesh(SPH, lvl)
        sol = S.solve_vector_biharmonic(mesh, ex.value)
        errs.append(F.vector_errors(sol.space, sol.coeffs, ex)[0])
        hs.append(mesh.mesh_size())
    assert np.all(_orders(errs, hs) >= 1.9)
    assert errs[-1] < 1e-3


# -- Stokes

def test_stokes_zero_data(stokes2):
    sol = stokes2.solve(lambda x: np.zeros_like(x))
    assert np.all(sol.u == 0) and np.all(sol.p == 0)


def test_stokes_manufactured_rates():
    t = convergence_study(ProblemConfig("stokes"), [1, 2, 3])
    assert np.all(t.orders("error_l2") >= 1.9)
    assert np.all(t.orders("pressure_l2") >= 1.9)


def test_stokes_solution_properties(stokes2):
    mms = F.stokes_sphere_mms(SPH)
    sol = stokes2.solve(mms.force)
    st = stokes2
    assert abs(st.p_mass_ones @ sol.p) <= 1e-12
    assert np.linalg.norm(st.p_compatible(st.B.matvec(sol.u))) <= 1e-10 * np.linalg.norm(st.lap.load(mms.force))
    nodal = st.V.expand(sol.u)
    assert np.abs(np.einsum("nc,nc->n", nodal, st.V.node_normals)).max() <= 1e-14


def test_stokes_compressible_datum():
    mms = F.stokes_compressible_mms(SPH)
    errs, perr = [], []
    for lvl in (1, 2, 3):
        st = S.StokesSystem(build_mesh(SPH, lvl))
        sol = st.solve(mms.force, mms.divergence)
        errs.append(F.vector_errors(st.V, sol.u, mms.velocity)[0])
        perr.append(F.scalar_l2_norm(st.Q, sol.p))
    assert np.all(np.array(errs[1:]) / errs[:-1] < 0.3)
    assert np.all(np.array(perr[1:]) / perr[:-1] < 0.4)


def test_stokes_symmetry_and_positivity(stokes2):
    st = stokes2
    op = S.StokesOperator(st)
    rng = np.random.default_rng(2)
    u, v = (st.leray(rng.standard_normal(st.nv)) for _ in range(2))
    Au, Av = op.apply(u), op.apply(v)
    lhs, rhs = st.Mv.quad(Au, v), st.Mv.quad(Av, u)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0) * 10
    assert st.Mv.quad(Au, u) > 0


def test_decoupled_pressure_matches_saddle_pressure():
    mms = F.stokes_sphere_mms(SPH)
    gaps = []
    for lvl in (1, 2, 3):
        st = S.StokesSystem(build_mesh(SPH, lvl))
        sol = st.solve(mms.force)
        pi = S.decoupled_pressure(st, sol.u, mms.force)
        gaps.append(F.scalar_l2_norm(st.Q, pi - sol.p))
    assert gaps[-1] < gaps[0]
    assert gaps[-1] < 0.05


# -- Helmholtz decomposition and Leray projection

def test_helmholtz_examples(stokes2):
    st = stokes2
    grad = st.V.interpolate(F.gradient_field(SPH).value)
    rot = st.V.interpolate(F.rotation_field(SPH).value)
    h_grad = st.helmholtz(grad)
    h_rot = st.helmholtz(rot)
    n = st.l2_norm
    assert n(h_grad.divergence_free) <= 0.02 * n(grad)
    assert n(h_rot.gradient) <= 0.02 * n(rot)
    both = st.helmholtz(grad + rot)
    assert n(both.divergence_free - rot) <= 0.02 * n(rot)
    assert n(both.gradient - grad) <= 0.02 * n(grad)
    for res, v in ((h_grad, grad), (h_rot, rot), (both, grad + rot)):
        assert n(res.divergence_free + res.gradient - v) <= 1e-10 * n(v)
        assert abs(st.Mv.quad(res.divergence_free, res.gradient)) <= 1e-10 * st.Mv.quad(v)


def test_helmholtz_error_is_second_order():
    errs = []
    for lvl in (1, 2, 3):
        st = S.StokesSystem(build_mesh(SPH, lvl))
        grad = st.V.interpolate(F.gradient_field(SPH).value)
        errs.append(st.l2_norm(st.helmholtz(grad).divergence_free) / st.l2_norm(grad))
    assert np.all(_orders(errs, [S.StokesSystem(build_mesh(SPH, l)).mesh.mesh_size() for l in (1, 2, 3)]) >= 1.7)


def test_helmholtz_with_pressure_space_potentials(stokes2):
    # P1 potentials resolve gradients only to first order, but the split stays exact
    st = stokes2
    grad = st.V.interpolate(F.gradient_field(SPH).value)
    res = st.helmholtz(grad, potential_degree=1)
    assert res.potential_space.degree == 1
    assert st.l2_norm(res.divergence_free + res.gradient - grad) <= 1e-10 * st.l2_norm(grad)
    assert np.linalg.norm(st.p_compatible(st.B.matvec(res.divergence_free))) <= 1e-10


def test_leray_projection_properties(stokes2):
    st = stokes2
    rng = np.random.default_rng(8)
    v, w = rng.standard_normal(st.nv), rng.standard_normal(st.nv)
    pv, pw = S.leray_project(st, v), S.leray_project(st, w)
    assert st.l2_norm(S.leray_project(st, pv) - pv) <= 1e-8 * st.l2_norm(v)
    div_free = st.V.interpolate(F.rotation_field(SPH).value)
    div_free = st.leray(div_free)
    assert st.l2_norm(st.leray(div_free) - div_free) <= 1e-10 * st.l2_norm(div_free)
    lhs = st.Mv.quad(v, w)
    rhs = st.Mv.quad(pv, pw) + st.Mv.quad(v - pv, w - pw)
    assert abs(lhs - rhs) <= 1e-10 * np.sqrt(st.Mv.quad(v) * st.Mv.quad(w))


# -- Oseen

def test_oseen_with_zero_wind_is_stokes(stokes2):
    st = stokes2
    mms = F.stokes_sphere_mms(SPH)
    F_ = st.lap.load(mms.force)
    G = np.zeros(st.np_)
    u0, p0, _ = st.solve_saddle(F_, G)
    u1, p1, _ = S.solve_oseen(st, np.zeros(st.nv), F_, G)
    assert st.h1_norm(u1 - u0) <= 1e-10 * st.h1_norm(u0)
    assert F.scalar_l2_norm(st.Q, p1 - p0) <= 1e-10 * max(F.scalar_l2_norm(st.Q, p0), 1.0)


def test_oseen_small_wind_perturbation(stokes2):
    st = stokes2
    mms = F.stokes_sphere_mms(SPH)
    F_ = st.lap.load(mms.force)
    G = np.zeros(st.np_)
    u0, _, _ = st.solve_saddle(F_, G)
    base = st.leray(st.V.interpolate(compile_expression(FORCE_TEXT, SPH)))
    gaps = []
    for scale in (1e-3, 1e-2, 1e-1):
        u, _, _ = S.solve_oseen(st, scale * base, F_, G)
        gaps.append(st.h1_norm(u - u0) / st.h1_norm(u0))
    assert_allclose(np.array(gaps[1:]) / gaps[:-1], 10.0, rtol=0.05)


def test_oseen_energy_identity(stokes2):
    st = stokes2
    w = st.leray(st.V.interpolate(compile_expression(FORCE_TEXT, SPH)))
    F_ = st.lap.load(compile_expression("P([sin(x1), x2*x3, cos(x2)])", SPH))
    u, p, _ = S.solve_oseen(st, w, F_, np.zeros(st.np_))
    N = st.V.reduce(asm.convection(st.V, w))
    lhs = st.A.quad(u) + N.quad(u)
    assert abs(lhs - F_ @ u) <= 1e-9 * abs(F_ @ u)
    assert abs(N.quad(u)) <= 1e-2 * st.A.quad(u)


def test_oseen_projects_divergent_wind(stokes2):
    st = stokes2
    grad = st.V.interpolate(F.gradient_field(SPH).value)
    F_ = st.lap.load(F.rotation_field(SPH).value)
    with pytest.warns(UserWarning, match="Leray"):
        u, _, _ = S.solve_oseen(st, grad, F_, np.zeros(st.np_))
    u_ref, _, _ = S.solve_oseen(st, st.leray(grad), F_, np.zeros(st.np_))
    assert st.h1_norm(u - u_ref) <= 1e-9 * st.h1_norm(u_ref)


# -- Navier-Stokes

def test_ns_zero_data(stokes2):
    res = S.solve_navier_stokes(stokes2, lambda x: np.zeros_like(x))
    assert res.converged and res.iterations == 1
    assert np.all(res.u == 0)


def test_ns_small_data_contracts(stokes2):
    mms = F.stokes_sphere_mms(SPH, 0.01, convective=True)
    res = S.solve_navier_stokes(stokes2, mms.force)
    assert res.converged and res.iterations <= 6
    assert np.all(np.array(res.ratios) < 0.2)
    assert res.residuals[-1] <= 1e-9


def test_ns_contraction_grows_with_data(stokes2):
    force = compile_expression(FORCE_TEXT, SPH)
    first = []
    for eps in (0.01, 0.1, 1.0):
        res = S.solve_navier_stokes(stokes2, lambda x: eps * force(x))
        first.append(res.ratios[0])
    assert first[0] < first[1] < first[2]


def test_ns_fixed_point_independent_of_damping(stokes2):
    force = compile_expression(FORCE_TEXT, SPH)
    a = S.solve_navier_stokes(stokes2, lambda x: 0.5 * force(x))
    b = S.solve_navier_stokes(stokes2, lambda x: 0.5 * force(x), damping=0.7, max_nl=80)
    c = S.navier_stokes(stokes2, lambda x: 0.5 * force(x), method="newton")
    for r in (a, b, c):
        assert r.residuals[-1] <= 1e-9
    assert stokes2.h1_norm(a.u - b.u) <= 1e-8 * stokes2.h1_norm(a.u)
    assert stokes2.h1_norm(a.u - c.u) <= 1e-8 * stokes2.h1_norm(a.u)
    assert c.iterations < a.iterations


def test_ns_divergence_is_reported():
    st = S.StokesSystem(build_mesh(SPH, 1))
    force = compile_expression(FORCE_TEXT, SPH)
    with pytest.raises(SolverError, match="contracting|converge"):
        S.solve_navier_stokes(st, lambda x: 400.0 * force(x), max_nl=12)


def test_ns_study_pressure_convention():
    t = convergence_study(ProblemConfig("ns", eps=0.05), [1, 2, 3])
    assert np.all(t.orders("error_l2") >= 1.9)
    assert np.all(t.orders("pressure_l2") >= 1.9)


# -- Stokes spectrum, fractional powers, Galerkin

def test_stokes_eigenvalues(stokes_op2):
    vals = stokes_op2.pairs.values
    assert_allclose(vals[:3], 1.0, rtol=0.03)
    assert_allclose(vals[3:8], 5.0, rtol=0.03)
    assert np.all(vals > 0) and np.all(np.diff(vals) >= 0)
    st = stokes_op2.sys
    X = stokes_op2.pairs.vectors
    assert np.abs(st.p_compatible(st.B.to_scipy() @ X)).max() <= 1e-8


def test_fractional_powers(stokes_op2):
    op = stokes_op2
    v1 = op.pairs.vectors[:, 0]
    w1 = op.pairs.values[0]
    a1, rem = S.fractional_stokes_apply(op, 1.0, v1)
    assert rem <= 1e-10
    assert op.sys.l2_norm(a1 - w1 * v1) <= 1e-8
    assert op.sys.l2_norm(op.apply(v1) - w1 * v1) <= 1e-6
    half, _ = S.fractional_stokes_apply(op, 0.5, v1)
    assert op.sys.l2_norm(half - v1) <= 0.02
    rng = np.random.default_rng(3)
    v = op.pairs.vectors @ rng.standard_normal(op.pairs.vectors.shape[1])
    twice = op.power(0.5, op.power(0.5, v))
    assert op.sys.l2_norm(twice - op.power(1.0, v)) <= 1e-8 * op.sys.l2_norm(op.power(1.0, v))
    with pytest.raises(ValueError):
        S.fractional_stokes_apply(op, 0.0, v)
    with pytest.raises(SolverError):
        S.fractional_stokes_apply(S.StokesOperator(op.sys), 1.0, v)


def test_galerkin_zero_data(stokes2, stokes_op2):
    res = S.ns_galerkin(stokes2, lambda x: np.zeros_like(x), 3, pairs=stokes_op2.pairs)
    assert np.all(res.coefficients == 0)


def test_galerkin_single_mode(stokes2, stokes_op2):
    mms = F.stokes_sphere_mms(SPH, 0.01, convective=True)
    gal = S.ns_galerkin(stokes2, mms.force, 3, pairs=stokes_op2.pairs)
    pic = S.solve_navier_stokes(stokes2, mms.force)
    assert stokes2.h1_norm(gal.u - pic.u) <= 1e-3 * stokes2.h1_norm(pic.u)
    assert F.scalar_l2_norm(stokes2.Q, gal.p - pic.p) <= 0.05 * F.scalar_l2_norm(stokes2.Q, pic.p)


def test_galerkin_converges_with_modes(stokes2, stokes_op2):
    force = compile_expression(FORCE_TEXT, SPH)
    pic = S.solve_navier_stokes(stokes2, lambda x: 0.5 * force(x))
    gaps = []
    for n in (3, 8, 20):
        gal = S.ns_galerkin(stokes2, lambda x: 0.5 * force(x), n, pairs=stokes_op2.pairs)
        gaps.append(stokes2.h1_norm(gal.u - pic.u) / stokes2.h1_norm(pic.u))
    assert gaps[0] > gaps[1] > gaps[2]
