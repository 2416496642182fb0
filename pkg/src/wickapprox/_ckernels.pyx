# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the chaos kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


def hermite_table(w, double delta, int maxdeg):
    w = np.asarray(w, dtype=np.float64)
    out = np.empty((maxdeg + 1,) + w.shape)
    out[0] = 1.0
    if maxdeg >= 1:
        out[1] = w
    for m in range(1, maxdeg):
        out[m + 1] = w * out[m] - (m * delta) * out[m - 1]
    return out


def eval_batch(const unsigned char[:, ::1] exps, const double[::1] coefs,
               const long long[::1] start, const long long[::1] end,
               w, double delta, int maxdeg):
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n_samples = wv.shape[0], n = wv.shape[1]
    cdef Py_ssize_t n_terms = exps.shape[0]
    cdef Py_ssize_t s, t, i, a
    cdef int d = maxdeg + 1
    cdef double acc, x
    out_arr = np.zeros(n_samples)
    cdef double[::1] out = out_arr
    cdef double* table = <double*> malloc(n * d * sizeof(double))
    cdef double* prefix = <double*> malloc((n + 1) * sizeof(double))
    if table == NULL or prefix == NULL:
        free(table)
        free(prefix)
        raise MemoryError()
    try:
        with nogil:
            for s in range(n_samples):
                for i in range(n):
                    x = wv[s, i]
                    table[i * d] = 1.0
                    if d > 1:
                        table[i * d + 1] = x
                    for a in range(1, d - 1):
                        table[i * d + a + 1] = x * table[i * d + a] - (a * delta) * table[i * d + a - 1]
                prefix[0] = 1.0
                acc = 0.0
                for t in range(n_terms):
                    for i in range(start[t], end[t]):
                        prefix[i + 1] = prefix[i] * table[i * d + exps[t, i]]
                    acc = acc + coefs[t] * prefix[end[t]]
                out[s] = acc
    finally:
        free(table)
        free(prefix)
    return out_arr


def degree_pairs(deg_a, deg_b_sorted, int cap, bint above=False):
    cdef long long[::1] da = np.ascontiguousarray(deg_a, dtype=np.int64)
    cdef long long[::1] db = np.ascontiguousarray(deg_b_sorted, dtype=np.int64)
    limit_arr = np.searchsorted(np.asarray(db), cap - np.asarray(da), side="right").astype(np.int64)
    cdef long long[::1] limit = limit_arr
    cdef Py_ssize_t na = da.shape[0], nb = db.shape[0]
    cdef Py_ssize_t i, j, k = 0, total = 0
    for i in range(na):
        total += (nb - limit[i]) if above else limit[i]
    ia_arr = np.empty(total, dtype=np.int64)
    ib_arr = np.empty(total, dtype=np.int64)
    cdef long long[::1] ia = ia_arr
    cdef long long[::1] ib = ib_arr
    with nogil:
        for i in range(na):
            if above:
                for j in range(limit[i], nb):
                    ia[k] = i
                    ib[k] = j
                    k += 1
            else:
                for j in range(limit[i]):
                    ia[k] = i
                    ib[k] = j
                    k += 1
    return ia_arr, ib_arr
