"""Pure-Python scoring kernels; fallback when the extension is absent.

Accumulation order matches ttpmap._ckernels exactly so both produce
bit-identical floats (no FMA, no reassociation on either side).
"""

from __future__ import annotations

import numpy as np


def bm25_scores(n_docs, doc_lens, avg_len, k1, b, postings):
    """Accumulate BM25 contributions term by term into a dense score array.

    `postings` is a sequence of (idf, doc_ids, tfs) triples, one per matched
    query term occurrence; doc_ids are int32 indices into doc_lens.
    """
    scores = np.zeros(n_docs, dtype=np.float64)
    if avg_len <= 0.0:
        return scores
    k1 = float(k1)
    b = float(b)
    avg_len = float(avg_len)
    for idf, doc_ids, tfs in postings:
        idf = float(idf)
        for j in range(len(doc_ids)):
            d = int(doc_ids[j])
            tf = float(tfs[j])
            denom = tf + k1 * (1.0 - b + b * float(doc_lens[d]) / avg_len)
            scores[d] += idf * tf * (k1 + 1.0) / denom
    return scores


def dots_and_norms(q, matrix):
    """Row dot products against q plus squared norms, fixed summation order."""
    n, d = matrix.shape
    dots = np.empty(n, dtype=np.float64)
    norms = np.empty(n, dtype=np.float64)
    qn = 0.0
    for j in range(d):
        qj = float(q[j])
        qn += qj * qj
    for i in range(n):
        acc = 0.0
        nacc = 0.0
        row = matrix[i]
        for j in range(d):
            mij = float(row[j])
            acc += float(q[j]) * mij
            nacc += mij * mij
        dots[i] = acc
        norms[i] = nacc
    return dots, norms, qn
