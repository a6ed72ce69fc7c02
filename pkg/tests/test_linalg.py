import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose

from tangentflow import assemble as asm
from tangentflow.geometry import Sphere
from tangentflow.linalg import SparseMatrix, block, read_matrix_market, write_matrix_market
from tangentflow.linalg.eigen import eigs_smallest, group_clusters
from tangentflow.linalg.kernels import implementations
from tangentflow.linalg.krylov import BreakdownError, SolverError, amg, cg, minres
from tangentflow.mesh import build_mesh
from tangentflow.solvers import StokesSystem


def _dense(a):
    return SparseMatrix.from_scipy(sp.csr_matrix(np.asarray(a, dtype=float)))


@pytest.fixture(scope="module")
def p1_sphere():
    space = asm.Space(build_mesh(Sphere(), 3), 1)
    return asm.scalar_stiffness(space), asm.scalar_mass(space)


# -- sparse container

def test_from_coo_sums_duplicates():
    A = SparseMatrix.from_coo([0, 0, 1, 1], [0, 0, 1, 0], [1.0, 2.0, 5.0, -1.0], (2, 2))
    assert_allclose(A.to_scipy().toarray(), [[3.0, 0.0], [-1.0, 5.0]])
    with pytest.raises(IndexError):
        SparseMatrix.from_coo([2], [0], [1.0], (2, 2))


def test_products_match_scipy(rng):
    S = sp.random(40, 30, density=0.2, random_state=7, format="csr")
    A = SparseMatrix.from_scipy(S)
    x = rng.standard_normal(30)
    X = rng.standard_normal((30, 4))
    assert_allclose(A.matvec(x), S @ x, atol=1e-14)
    assert_allclose(A.matmat(X), S @ X, atol=1e-14)
    assert_allclose(A.T.matvec(rng.standard_normal(40)).shape, (30,))


def test_block_and_algebra():
    A = _dense([[2, 1], [1, 3]])
    B = _dense([[1, -1]])
    K = block([[A, B.T], [B, None]])
    assert K.shape == (3, 3)
    assert K.is_symmetric()
    assert_allclose((A + A * 2.0 - A).to_scipy().toarray(), 2 * A.to_scipy().toarray())


def test_matrix_market_round_trip(tmp_path, p1_sphere):
    K, _ = p1_sphere
    write_matrix_market(tmp_path / "K.mtx", K)
    back = read_matrix_market(tmp_path / "K.mtx")
    assert back.symmetric
    assert abs(back.to_scipy() - K.to_scipy()).max() == 0.0


def test_compiled_and_fallback_kernels_agree(rng):
    impls = implementations()
    assert "python" in impls
    S = sp.random(200, 150, density=0.05, random_state=3, format="coo")
    x = rng.standard_normal(150)
    X = rng.standard_normal((150, 3))
    results = {}
    for name, mod in impls.items():
        ip, ix, dv = mod.coo_to_csr(200, 150, S.row.astype(np.int64), S.col.astype(np.int64), S.data)
        y = np.zeros(200)
        mod.csr_matvec(ip, ix, dv, x, y)
        Y = np.zeros((200, 3))
        mod.csr_matmat(ip, ix, dv, X, Y)
        results[name] = (np.asarray(ip), np.asarray(ix), np.asarray(dv), y, Y)
    ref = S.tocsr()
    for ip, ix, dv, y, Y in results.values():
        assert_allclose(sp.csr_matrix((dv, ix, ip), shape=(200, 150)).toarray(), ref.toarray(), atol=1e-15)
        assert_allclose(y, ref @ x, rtol=1e-13, atol=1e-13)
        assert_allclose(Y, ref @ X, rtol=1e-13, atol=1e-13)


# -- CG

def test_cg_identity_one_iteration(rng):
    b = rng.standard_normal(10)
    x, rep = cg(SparseMatrix.identity(10), b)
    assert rep.iterations == 1
    assert_allclose(x, b, atol=1e-15)


def test_cg_two_by_two():
    x, rep = cg(_dense([[4, 1], [1, 3]]), np.array([1.0, 2.0]), tol=1e-14)
    assert_allclose(x, [1 / 11, 7 / 11], rtol=1e-13)
    assert rep.converged and rep.iterations <= 2


def test_cg_deflated_singular_stiffness(p1_sphere):
    K, M = p1_sphere
    n = K.shape[0]
    b = M.matvec(np.random.default_rng(0).standard_normal(n))
    b -= b.mean()
    ones = np.ones(n)
    x, rep = cg(K, b, tol=1e-10, kernel=ones, precond=amg(K + M * 1e-12, ones[:, None]))
    assert rep.converged
    assert abs(x.mean()) < 1e-12 * np.abs(x).max()
    assert np.linalg.norm(K.matvec(x) - b) <= 1e-9 * np.linalg.norm(b)


def test_cg_error_decreases_in_energy_norm(p1_sphere):
    K, M = p1_sphere
    A = K + M
    n = A.shape[0]
    xs = np.random.default_rng(1).standard_normal(n)
    b = A.matvec(xs)
    iterates = []
    # rerun with growing iteration caps and compare energy errors
    for k in (1, 3, 6, 12, 24):
        x, rep = cg(A, b, tol=1e-14, maxit=k)
        iterates.append(A.quad(x - xs))
    assert all(b_ <= a_ * (1 + 1e-12) for a_, b_ in zip(iterates, iterates[1:]))
    _, rep = cg(A, b, tol=1e-10)
    assert rep.converged and rep.residual_history[0] == 1.0


def test_cg_breakdown_is_named():
    with pytest.raises(BreakdownError, match="not positive definite"):
        cg(_dense([[1.0, 0.0], [0.0, -1.0]]), np.array([1.0, 1.0]))
    assert issubclass(BreakdownError, SolverError)


def test_cg_iteration_limit_flagged(p1_sphere):
    K, M = p1_sphere
    A = K + M
    _, rep = cg(A, np.ones(A.shape[0]) + np.arange(A.shape[0]), tol=1e-14, maxit=2)
    assert not rep.converged
    assert rep.iterations == 2


def test_cg_zero_rhs():
    x, rep = cg(SparseMatrix.identity(4), np.zeros(4))
    assert rep.iterations == 0 and np.all(x == 0)


# -- MINRES

def test_minres_indefinite_diagonal():
    x, rep = minres(SparseMatrix.diag([1.0, -1.0]), np.array([1.0, 1.0]))
    assert_allclose(x, [1.0, -1.0], atol=1e-14)
    assert rep.converged


def test_minres_small_saddle():
    # dense oracle: x1 + x2 = 1 and 2 x1 + x3 = 2 x2 + x3 = 1 give (1/2, 1/2, 0)
    K = _dense([[2, 0, 1], [0, 2, 1], [1, 1, 0]])
    x, rep = minres(K, np.ones(3), tol=1e-14)
    assert_allclose(x, np.linalg.solve(K.to_scipy().toarray(), np.ones(3)), atol=1e-13)
    assert_allclose(x, [0.5, 0.5, 0.0], atol=1e-13)


def test_minres_rejects_indefinite_preconditioner():
    with pytest.raises(SolverError):
        minres(SparseMatrix.identity(2), np.ones(2), precond=lambda r: -r)


def test_minres_stokes_coarse_sphere():
    st = StokesSystem(build_mesh(Sphere(), 2))
    rng = np.random.default_rng(5)
    F = st.Mv.matvec(rng.standard_normal(st.nv))
    rhs = np.concatenate([F, np.zeros(st.np_)])
    x, rep = minres(st.saddle, rhs, tol=1e-10, maxit=2000, precond=st._block_pre(st.velocity_pre))
    assert rep.converged
    assert rep.iterations < 500
    assert np.linalg.norm(st.saddle.matvec(x) - rhs) <= 1e-9 * np.linalg.norm(rhs)


# -- eigenvalues

def test_eigs_diagonal():
    pairs = eigs_smallest(SparseMatrix.diag([1.0, 2.0, 3.0]), SparseMatrix.identity(3), 2, tol=1e-10)
    assert_allclose(pairs.values, [1.0, 2.0], rtol=1e-10)


def test_eigs_sphere_laplacian(p1_sphere):
    K, M = p1_sphere
    ones = np.ones(K.shape[0])
    pairs = eigs_smallest(K, M, 8, tol=1e-8, kernel=ones)
    assert pairs.converged
    assert_allclose(pairs.values[:3], 2.0, rtol=0.02)
    assert_allclose(pairs.values[3:8], 6.0, rtol=0.03)
    assert np.all(np.diff(pairs.values) >= 0)
    X = pairs.vectors
    MX = np.column_stack([M.matvec(X[:, j]) for j in range(X.shape[1])])
    assert_allclose(X.T @ MX, np.eye(8), atol=1e-10)
    assert_allclose(ones @ MX, 0.0, atol=1e-10)
    rq = np.array([K.quad(X[:, j]) for j in range(8)])
    assert_allclose(rq, pairs.values, rtol=1e-8)
    assert np.all(pairs.residuals <= 1e-8 * np.maximum(1.0, pairs.values))


def test_group_clusters():
    assert group_clusters([1.0, 1.00001, 2.0, 2.0, 2.00002], 1e-4) == [(pytest.approx(1.000005), 2),
                                                                      (pytest.approx(2.0000067, rel=1e-6), 3)]


def test_kernel_benchmark_runs(capsys):
    import runpy
    from pathlib import Path
    bench = runpy.run_path(str(Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"))
    bench["main"](["--level", "1", "--repeat", "1"])
    out = capsys.readouterr().out
    assert "P1 stiffness, level 1" in out and "matvec" in out
