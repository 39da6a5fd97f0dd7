# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring kernels; same contracts as kernels._py."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def sparse_dot_scores(cnp.int64_t[::1] q_terms, double[::1] q_weights,
                      cnp.int64_t[::1] offsets, cnp.int64_t[::1] posting_docs,
                      double[::1] posting_weights, Py_ssize_t n_docs):
    scores_arr = np.zeros(n_docs, dtype=np.float64)
    touched_arr = np.zeros(n_docs, dtype=np.uint8)
    cdef double[::1] scores = scores_arr
    cdef cnp.uint8_t[::1] touched = touched_arr
    cdef Py_ssize_t i, j, lo, hi, doc
    cdef double qw
    for i in range(q_terms.shape[0]):
        lo = offsets[q_terms[i]]
        hi = offsets[q_terms[i] + 1]
        qw = q_weights[i]
        for j in range(lo, hi):
            doc = posting_docs[j]
            scores[doc] += qw * posting_weights[j]
            touched[doc] = 1
    return scores_arr, touched_arr.view(bool)


def maxsim_scores(double[:, ::1] q_vecs, double[:, ::1] flat_vecs,
                  cnp.int64_t[::1] offsets):
    cdef Py_ssize_t n_docs = offsets.shape[0] - 1
    cdef Py_ssize_t lq = q_vecs.shape[0]
    cdef Py_ssize_t dim = q_vecs.shape[1]
    scores_arr = np.zeros(n_docs, dtype=np.float64)
    cdef double[::1] scores = scores_arr
    cdef Py_ssize_t d, i, j, k, lo, hi
    cdef double best, dot, total
    for d in range(n_docs):
        lo = offsets[d]
        hi = offsets[d + 1]
        total = 0.0
        for i in range(lq):
            best = -1e300
            for j in range(lo, hi):
                dot = 0.0
                for k in range(dim):
                    dot += q_vecs[i, k] * flat_vecs[j, k]
                if dot > best:
                    best = dot
            total += best
        scores[d] = total
    return scores_arr
