import numpy as np
import pytest
from numpy.testing import assert_allclose

from tangentflow import assemble as asm
from tangentflow.geometry import MeshOnly, PlanePatch, Sphere, Torus
from tangentflow.linalg.eigen import eigs_smallest
from tangentflow.expr import compile_expression
from tangentflow.mesh import TriMesh, build_mesh, mesh_metrics, octahedron
from tangentflow.solvers import StokesSystem, VectorLaplace
from tangentflow.verify import fields as F


def _sym_defect(A):
    s = A.to_scipy()
    return abs(s - s.T).max() / abs(s).max()


def _plane_mesh(n=4):
    # structured triangulation of [-1, 1]^2 with a perturbed interior
    g = np.linspace(-1.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    rng = np.random.default_rng(3)
    inner = (np.abs(X) < 1) & (np.abs(Y) < 1)
    X = X + inner * rng.uniform(-0.1, 0.1, X.shape)
    Y = Y + inner * rng.uniform(-0.1, 0.1, Y.shape)
    v = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    t = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            t += [(a, b, c), (a, c, d)]
    return TriMesh(v, np.array(t), PlanePatch())


def _flat_reference_stiffness(mesh, degree):
    """Textbook planar Lagrange stiffness with edge-midpoint P2 nodes."""
    v = mesh.vertices[:, :2]
    if degree == 1:
        cells = mesh.triangles
    else:
        cells = np.concatenate([mesh.triangles, mesh.n_vertices + mesh.triangle_edges], axis=1)
    n = mesh.n_vertices + (mesh.n_edges if degree == 2 else 0)
    K = np.zeros((n, n))
    # degree-2 exact rule: edge midpoints with weight 1/3
    lam_pts = [np.array([0.5, 0.5, 0.0]), np.array([0.0, 0.5, 0.5]), np.array([0.5, 0.0, 0.5])]
    for tri, cell in zip(mesh.triangles, cells):
        p = v[tri]
        T = np.array([p[1] - p[0], p[2] - p[0]]).T
        area = 0.5 * abs(np.linalg.det(T))
        gl = np.linalg.inv(np.vstack([np.ones(3), p.T]))[:, 1:]   # grad lambda_i (3, 2)
        for lam in lam_pts:
            if degree == 1:
                G = gl
            else:
                # vertex i: lambda_i (2 lambda_i - 1); edge (i, j): 4 lambda_i lambda_j
                G = [(4 * lam[i] - 1) * gl[i] for i in range(3)]
                for e in range(3):
                    i, j = asm_edge_vertices(mesh, tri, cell[3 + e])
                    G.append(4 * (lam[i] * gl[j] + lam[j] * gl[i]))
                G = np.array(G)
            K[np.ix_(cell, cell)] += area / 3.0 * G @ G.T
    return K


def asm_edge_vertices(mesh, tri, node):
    a, b = mesh.edges[node - mesh.n_vertices]
    return list(tri).index(a), list(tri).index(b)


# -- dof maps

def test_dof_counts_octahedron():
    o = octahedron(Sphere())
    assert asm.build_space(o, "P1").n_dofs == 6
    assert asm.build_space(o, "P2").n_dofs == 18
    assert asm.build_space(o, "P2vec", tangential="penalty").n_dofs == 54
    assert asm.build_space(o, "P2vec").n_dofs == 36


def test_tangential_reduction_keeps_two_thirds():
    m = build_mesh(Sphere(), 2)
    full = asm.build_space(m, "P2vec", tangential="penalty")
    red = asm.build_space(m, "P2vec")
    assert 3 * red.n_dofs == 2 * full.n_dofs


def test_unsupported_space_kind():
    with pytest.raises(ValueError, match="unsupported"):
        asm.build_space(octahedron(), "P3")
    with pytest.raises(ValueError, match="unsupported"):
        asm.build_space(octahedron(), "Q1")


def test_p2_numbering_vertices_then_edges():
    m = build_mesh(Sphere(), 1)
    s = asm.build_space(m, "P2")
    assert_allclose(s.node_points[: m.n_vertices], m.vertices)
    mid = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
    assert_allclose(s.node_points[m.n_vertices:], mid)


# -- scalar forms

@pytest.mark.parametrize("degree", [1, 2])
def test_scalar_forms_on_sphere(degree):
    m = build_mesh(Sphere(), 3)
    s = asm.Space(m, degree)
    K, M = asm.scalar_stiffness(s), asm.scalar_mass(s)
    one = np.ones(s.n_nodes)
    assert np.abs(K.matvec(one)).max() <= 1e-12
    assert _sym_defect(K) <= 1e-13 and _sym_defect(M) <= 1e-13
    # lifted integrals see the exact sphere up to quadrature error
    assert abs(M.quad(one) - 4 * np.pi) <= 1e-7


@pytest.mark.parametrize("degree", [1, 2])
def test_flat_mass_partition_of_unity(degree):
    asm.set_lift(False)
    try:
        m = build_mesh(Sphere(), 3)
        s = asm.Space(m, degree)
        one = np.ones(s.n_nodes)
        area = mesh_metrics(m).area_total
        assert abs(asm.scalar_mass(s).quad(one) - area) <= 1e-12 * area
        assert np.abs(asm.scalar_stiffness(s).matvec(one)).max() <= 1e-12
    finally:
        asm.set_lift(True)


def test_scalar_first_eigenvalue_is_two():
    s = asm.Space(build_mesh(Sphere(), 3), 1)
    K, M = asm.scalar_stiffness(s), asm.scalar_mass(s)
    pairs = eigs_smallest(K, M, 3, kernel=np.ones(s.n_nodes))
    assert_allclose(pairs.values, 2.0, rtol=0.02)


@pytest.mark.parametrize("degree", [1, 2])
def test_plane_patch_reproduces_flat_stiffness(degree):
    m = _plane_mesh()
    K = asm.scalar_stiffness(asm.Space(m, degree)).to_scipy().toarray()
    assert_allclose(K, _flat_reference_stiffness(m, degree), atol=1e-13)


# -- vector forms

def test_vector_stiffness_sphere_lowest_mode():
    op = VectorLaplace(build_mesh(Sphere(), 2), "bochner", 2)
    pairs = eigs_smallest(op.A, op.M, 3)
    assert_allclose(pairs.values, 1.0, rtol=0.03)
    assert _sym_defect(op.A) <= 1e-13


def test_constant_field_has_energy_on_sphere():
    m = build_mesh(Sphere(), 2)
    V = asm.Space(m, 2, True)
    A = V.reduce(asm.vector_stiffness(V))
    c = V.interpolate(lambda x: np.tile([0.0, 0.0, 1.0], (len(x), 1)))
    Mv = V.reduce(asm.vector_mass(V))
    assert A.quad(c) > 0.5 * Mv.quad(c)


def test_torus_vector_stiffness_lowest_eigenvalue_positive():
    vals = []
    for lvl in (1, 2):
        op = VectorLaplace(build_mesh(Torus(2.0, 1.0), lvl), "bochner", 2)
        vals.append(eigs_smallest(op.A, op.M, 1).values[0])
    assert min(vals) > 0
    # conforming refinement can only lower a Rayleigh minimum up to geometry error
    assert vals[1] <= vals[0] * 1.01
    assert abs(vals[1] - vals[0]) <= 0.05 * vals[0]


def test_weingarten_term_is_tangential_mass_on_unit_sphere():
    # W = P on the unit sphere, so int W u.v = int u.v - int (u.nu)(v.nu)
    V = asm.Space(build_mesh(Sphere(), 2), 2, True)
    W = V.reduce(asm.weingarten_mass(V)).to_scipy()
    PM = V.reduce(asm.vector_mass(V) - asm.normal_penalty(V, 1.0)).to_scipy()
    assert abs(W - PM).max() <= 1e-10 * abs(PM).max()
    assert _sym_defect(V.reduce(asm.weingarten_mass(V))) <= 1e-13


def test_weingarten_term_vanishes_on_plane():
    V = asm.Space(_plane_mesh(), 2, True)
    assert abs(asm.weingarten_mass(V).to_scipy()).max() == 0.0


def test_grad_div_symmetric_psd_and_small_on_rotation():
    ex = F.rotation_field(Sphere())
    ratios = []
    for lvl in (1, 2, 3):
        V = asm.Space(build_mesh(Sphere(), lvl), 2, True)
        G = V.reduce(asm.grad_div(V))
        A = V.reduce(asm.vector_stiffness(V))
        u = V.interpolate(ex.value)
        assert _sym_defect(G) <= 1e-13
        ratios.append(np.sqrt(G.quad(u) / A.quad(u)))
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < 1e-2


def test_divergence_pairing_of_gradient_field():
    m = build_mesh(Sphere(), 3)
    V, Q = asm.Space(m, 2, True), asm.Space(m, 1)
    B = V.reduce(asm.divergence(V, Q), other=Q)
    u = V.interpolate(F.gradient_field(Sphere()).value)
    q = Q.interpolate(lambda x: x[:, 2])
    assert_allclose(q @ B.matvec(u), 8 * np.pi / 3, rtol=0.02)
    rng = np.random.default_rng(0)
    w = rng.standard_normal(V.n_dofs)
    assert abs(np.ones(Q.n_nodes) @ B.matvec(w)) <= 1e-10 * np.linalg.norm(w)
    assert np.all(B.matvec(np.zeros(V.n_dofs)) == 0)


def test_divergence_needs_shared_mesh():
    with pytest.raises(ValueError):
        asm.divergence(asm.Space(build_mesh(Sphere(), 1), 2, True), asm.Space(build_mesh(Sphere(), 1), 1))


# -- convection

def test_convection_zero_and_linear():
    V = asm.Space(build_mesh(Sphere(), 2), 2, True)
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(V.n_dofs), rng.standard_normal(V.n_dofs)
    assert abs(asm.convection(V, np.zeros(V.n_dofs)).to_scipy()).max() == 0
    lhs = asm.convection(V, 2 * a + b).to_scipy()
    rhs = 2 * asm.convection(V, a).to_scipy() + asm.convection(V, b).to_scipy()
    assert abs(lhs - rhs).max() <= 1e-12 * abs(lhs).max()


def test_convection_rejects_normal_advection():
    o = octahedron(Sphere())
    V = asm.Space(o, 1, True, "penalty")
    w = o.vertices.ravel()          # radial
    with pytest.raises(ValueError, match="tangential"):
        asm.convection(V, w)
    with pytest.raises(ValueError):
        asm.convection(asm.Space(o, 1, True), np.zeros(5))


def test_convection_vanishes_for_rotation_field():
    rot = F.rotation_field(Sphere())
    V = asm.Space(build_mesh(Sphere(), 2), 2, True)
    u = V.interpolate(rot.value)
    assert abs(V.reduce(asm.convection(V, u)).quad(u)) <= 1e-12 * V.reduce(asm.vector_mass(V)).quad(u)


@pytest.mark.parametrize("surface", [Sphere(), Torus(2.0, 1.0)], ids=["sphere", "torus"])
def test_convection_skew_defect_decays_second_order(surface):
    a = compile_expression("P([x2*x3 + 0.3*x1, x1**2 - x3, x1*x2*x3 + 0.2])", surface)
    b = compile_expression("P([sin(x1), x2*x3, cos(x2)])", surface)
    defects, hs = [], []
    for lvl in (1, 2, 3):
        st = StokesSystem(build_mesh(surface, lvl))
        V = st.V
        w = st.leray(V.interpolate(a))
        u = V.interpolate(b)
        N = V.reduce(asm.convection(V, w))
        defects.append(abs(N.quad(u)) / (st.Mv.quad(u) * np.sqrt(st.Mv.quad(w))))
        hs.append(st.mesh.mesh_size())
    scaled = np.array(defects) / np.array(hs) ** 2
    assert np.all(np.diff(scaled) < 0)
    assert scaled[-1] < 1e-3


# -- constraints

def test_mean_zero_border_gives_zero_for_zero_data():
    from tangentflow.linalg.krylov import minres
    s = asm.Space(build_mesh(Sphere(), 2), 1)
    K, M = asm.scalar_stiffness(s), asm.scalar_mass(s)
    Kb = asm.mean_zero_border(K, M.matvec(np.ones(s.n_nodes)))
    x, _ = minres(Kb, np.zeros(s.n_nodes + 1))
    assert np.all(x == 0)


def test_penalty_tangency_on_mesh_only_sphere():
    rot = F.rotation_field(Sphere())
    defects = []
    for lvl in (1, 2, 3):
        m = build_mesh(Sphere(), lvl)
        flat = TriMesh(m.vertices, m.triangles, MeshOnly())
        op = VectorLaplace(flat, "bochner", 1, shift=1.0, tangential="penalty")
        u, _ = op.solve(op.load(rot.value), tol=1e-10)
        qd = asm.quad_data(flat, 1)
        val, _ = asm.eval_vector(op.space, u)
        un = np.einsum("tqi,ti->tq", val, qd.face_normal)
        defects.append(np.sqrt(np.sum(qd.weights * un ** 2)))
    ratios = np.array(defects[1:]) / defects[:-1]
    assert np.all(ratios < 0.7)


# -- parallel assembly

def test_parallel_assembly_matches_serial(monkeypatch):
    m = build_mesh(Sphere(), 3)
    monkeypatch.setattr(asm, "_CHUNK", 97)
    monkeypatch.setenv("TANGENTFLOW_NUM_THREADS", "4")
    asm.set_deterministic(True)
    try:
        V = asm.Space(m, 2, True)
        serial = asm.vector_stiffness(V).to_scipy()
        asm.set_deterministic(False)
        parallel = asm.vector_stiffness(V).to_scipy()
    finally:
        asm.set_deterministic(False)
    assert abs(serial - parallel).max() <= 1e-13 * abs(serial).max()
