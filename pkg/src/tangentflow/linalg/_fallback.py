"""Pure numpy versions of the compiled sparse kernels."""
import numpy as np


def csr_matvec(indptr, indices, data, x, out):
    rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    out[:] = np.bincount(rows, weights=data * x[indices], minlength=len(indptr) - 1)


def csr_matmat(indptr, indices, data, x, out):
    for j in range(x.shape[1]):
        col = np.empty(out.shape[0])
        csr_matvec(indptr, indices, data, np.ascontiguousarray(x[:, j]), col)
        out[:, j] = col


def coo_to_csr(n_rows, n_cols, rows, cols, vals):
    """Compress triplets into CSR, summing duplicates in input order."""
    order = np.lexsort((cols, rows))
    r, c, v = rows[order], cols[order], vals[order]
    if len(r) == 0:
        return np.zeros(n_rows + 1, np.int64), np.zeros(0, np.int64), np.zeros(0)
    new = np.ones(len(r), dtype=bool)
    new[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    starts = np.flatnonzero(new)
    data = np.add.reduceat(v, starts)
    indices = c[starts]
    counts = np.bincount(r[starts], minlength=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, indices.astype(np.int64), data
