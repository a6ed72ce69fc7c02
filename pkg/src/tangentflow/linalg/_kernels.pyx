# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse kernels: CSR matrix-vector product and COO to CSR compression."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_matvec(const long long[::1] indptr, const long long[::1] indices,
               const double[::1] data, const double[::1] x, double[::1] out):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc = acc + data[k] * x[indices[k]]
            out[i] = acc


def csr_matmat(const long long[::1] indptr, const long long[::1] indices,
               const double[::1] data, const double[:, ::1] x, double[:, ::1] out):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t m = x.shape[1]
    cdef Py_ssize_t i, k, j
    cdef double a
    cdef long long c
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                a = data[k]
                c = indices[k]
                for j in range(m):
                    out[i, j] = out[i, j] + a * x[c, j]


def coo_to_csr(Py_ssize_t n_rows, Py_ssize_t n_cols, const long long[::1] rows,
               const long long[::1] cols, const double[::1] vals):
    """Compress triplets into CSR, summing duplicates in input order."""
    cdef Py_ssize_t nnz_in = rows.shape[0]
    cdef Py_ssize_t i, k, r, start, stop, j, q, nrow
    cdef long long c, ck
    cdef double v
    counts_np = np.zeros(n_rows + 1, dtype=np.int64)
    cdef long long[::1] counts = counts_np
    for k in range(nnz_in):
        counts[rows[k] + 1] += 1
    for i in range(n_rows):
        counts[i + 1] += counts[i]
    order_np = np.empty(nnz_in, dtype=np.int64)
    cdef long long[::1] order = order_np
    fill_np = counts_np[:-1].copy()
    cdef long long[::1] fill = fill_np
    for k in range(nnz_in):
        r = rows[k]
        order[fill[r]] = k
        fill[r] += 1
    marker_np = np.full(n_cols, -1, dtype=np.int64)
    cdef long long[::1] marker = marker_np
    out_ptr_np = np.zeros(n_rows + 1, dtype=np.int64)
    cdef long long[::1] out_ptr = out_ptr_np
    out_idx_np = np.empty(nnz_in, dtype=np.int64)
    out_val_np = np.empty(nnz_in, dtype=np.float64)
    cdef long long[::1] out_idx = out_idx_np
    cdef double[::1] out_val = out_val_np
    cdef Py_ssize_t pos = 0
    with nogil:
        for i in range(n_rows):
            start = pos
            for q in range(counts[i], counts[i + 1]):
                k = order[q]
                c = cols[k]
                if marker[c] < start:
                    marker[c] = pos
                    out_idx[pos] = c
                    out_val[pos] = vals[k]
                    pos += 1
                else:
                    out_val[marker[c]] += vals[k]
            # insertion sort of the row by column index
            for j in range(start + 1, pos):
                ck = out_idx[j]
                v = out_val[j]
                q = j - 1
                while q >= start and out_idx[q] > ck:
                    out_idx[q + 1] = out_idx[q]
                    out_val[q + 1] = out_val[q]
                    q -= 1
                out_idx[q + 1] = ck
                out_val[q + 1] = v
            for j in range(start, pos):
                marker[out_idx[j]] = -1
            out_ptr[i + 1] = pos
    return out_ptr_np, out_idx_np[:pos].copy(), out_val_np[:pos].copy()
