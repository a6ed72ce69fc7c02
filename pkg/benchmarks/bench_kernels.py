"""Compare the compiled sparse kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--level 4] [--repeat 20]

The matrices are real assembled operators (P1 scalar and P2 tangential vector
stiffness on a refined icosphere), so the sparsity patterns are the ones the solvers see.
"""
import argparse
import time

import numpy as np

from tangentflow import assemble as asm
from tangentflow.geometry import Sphere
from tangentflow.linalg.kernels import implementations
from tangentflow.mesh import build_mesh


def best_of(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_matrix(name, A, impls, repeat, rng):
    S = A.to_scipy().tocoo()
    n, m = S.shape
    rows, cols, vals = S.row.astype(np.int64), S.col.astype(np.int64), S.data.copy()
    ip, ix, dv = A.indptr, A.indices, A.data
    x = rng.standard_normal(m)
    X = np.ascontiguousarray(rng.standard_normal((m, 8)))
    results = {}
    for key, k in impls.items():
        y = np.empty(n)
        Y = np.empty((n, 8))
        results[key] = {
            "coo_to_csr": best_of(lambda: k.coo_to_csr(n, m, rows, cols, vals), max(repeat // 4, 1)),
            "matvec": best_of(lambda: k.csr_matvec(ip, ix, dv, x, y), repeat),
            "matmat(8)": best_of(lambda: k.csr_matmat(ip, ix, dv, X, Y), repeat),
        }
        if key != "python":
            ref_y, ref_Y = np.empty(n), np.empty((n, 8))
            impls["python"].csr_matvec(ip, ix, dv, x, ref_y)
            impls["python"].csr_matmat(ip, ix, dv, X, ref_Y)
            assert np.allclose(y, ref_y, rtol=1e-12, atol=1e-12 * np.abs(ref_y).max())
            assert np.allclose(Y, ref_Y, rtol=1e-12, atol=1e-12 * np.abs(ref_Y).max())
    print(f"\n{name}: {n} rows, {A.nnz} nonzeros")
    print(f"  {'kernel':<12}" + "".join(f"{k:>14}" for k in impls) + ("      speedup" if len(impls) > 1 else ""))
    for op in ("coo_to_csr", "matvec", "matmat(8)"):
        cells = "".join(f"{results[k][op] * 1e3:>11.3f} ms" for k in impls)
        extra = ""
        if "compiled" in results:
            extra = f"{results['python'][op] / results['compiled'][op]:>12.1f}x"
        print(f"  {op:<12}{cells}{extra}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--level", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    impls = implementations()
    if "compiled" not in impls:
        print("compiled kernels are not built; only the numpy fallback is timed")
    mesh = build_mesh(Sphere(), args.level)
    rng = np.random.default_rng(0)
    K = asm.scalar_stiffness(asm.build_space(mesh, "P1"))
    bench_matrix(f"P1 stiffness, level {args.level}", K, impls, args.repeat, rng)
    A = asm.vector_stiffness(asm.build_space(mesh, "P2vec"))
    bench_matrix(f"P2 tangential vector stiffness, level {args.level}", A, impls, args.repeat, rng)


if __name__ == "__main__":
    main()
