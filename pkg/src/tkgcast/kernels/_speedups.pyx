# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: row scatter-add and circular correlation/convolution.

Drop-in replacements for tkgcast.kernels.reference. scatter_add_rows
accumulates in row order exactly like np.add.at; the correlation kernels may
differ from the numpy backend in the last ulp (different summation order).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(double[:, ::1] out, cnp.int64_t[::1] idx, double[:, ::1] rows):
    cdef Py_ssize_t e, j, r
    cdef Py_ssize_t n_rows = rows.shape[0]
    cdef Py_ssize_t dim = rows.shape[1]
    for e in range(n_rows):
        r = idx[e]
        for j in range(dim):
            out[r, j] += rows[e, j]
    return np.asarray(out)


def circular_correlate(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t e, i, k, shifted
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t d = a.shape[1]
    cdef double acc
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for e in range(n):
        for i in range(d):
            acc = 0.0
            shifted = i
            for k in range(d):
                acc += a[e, k] * b[e, shifted]
                shifted += 1
                if shifted == d:
                    shifted = 0
            out[e, i] = acc
    return out_arr


def circular_convolve(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t e, m, k, shifted
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t d = a.shape[1]
    cdef double acc
    out_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for e in range(n):
        for m in range(d):
            acc = 0.0
            shifted = m
            for k in range(d):
                acc += a[e, k] * b[e, shifted]
                shifted -= 1
                if shifted < 0:
                    shifted = d - 1
            out[e, m] = acc
    return out_arr
