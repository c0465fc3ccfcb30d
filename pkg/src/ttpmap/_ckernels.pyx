# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scoring kernels: BM25 accumulation and cosine primitives.

Must stay numerically identical to ttpmap._pykernels: same accumulation
order, plain IEEE double arithmetic (built without fast-math).
"""

import numpy as np


def bm25_scores(Py_ssize_t n_docs, double[::1] doc_lens, double avg_len,
                double k1, double b, postings):
    scores_arr = np.zeros(n_docs, dtype=np.float64)
    cdef double[::1] scores = scores_arr
    cdef int[::1] doc_ids
    cdef double[::1] tfs
    cdef double idf, tf, denom
    cdef Py_ssize_t j, d
    if avg_len <= 0.0:
        return scores_arr
    for term in postings:
        idf = term[0]
        doc_ids = term[1]
        tfs = term[2]
        for j in range(doc_ids.shape[0]):
            d = doc_ids[j]
            tf = tfs[j]
            denom = tf + k1 * (1.0 - b + b * doc_lens[d] / avg_len)
            scores[d] += idf * tf * (k1 + 1.0) / denom
    return scores_arr


def dots_and_norms(double[::1] q, double[:, ::1] matrix):
    cdef Py_ssize_t n = matrix.shape[0]
    cdef Py_ssize_t d = matrix.shape[1]
    dots_arr = np.empty(n, dtype=np.float64)
    norms_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] dots = dots_arr
    cdef double[::1] norms = norms_arr
    cdef double acc, nacc, qn = 0.0, mij
    cdef Py_ssize_t i, j
    for j in range(d):
        qn += q[j] * q[j]
    for i in range(n):
        acc = 0.0
        nacc = 0.0
        for j in range(d):
            mij = matrix[i, j]
            acc += q[j] * mij
            nacc += mij * mij
        dots[i] = acc
        norms[i] = nacc
    return dots_arr, norms_arr, qn
