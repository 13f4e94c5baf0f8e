"""Pure-numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Both are exercised by the test-suite; :mod:`corrhash.kernels` picks one at
import time.
"""

import numpy as np

_ENUM_CHUNK = 1 << 16


def hamming_to_all(db, query):
    """Hamming distance from ``query`` (W,) to every row of ``db`` (N, W)."""
    return np.bitwise_count(np.bitwise_xor(db, query[None, :])).sum(axis=1, dtype=np.int64)


def topk_hamming(db, query, k, exclude_row):
    """Rows of ``db`` ordered by (distance, row), first ``k`` of them.

    ``exclude_row`` < 0 disables self-exclusion.  Returns ``(rows, dists)``.
    """
    dist = hamming_to_all(db, query)
    order = np.argsort(dist, kind="stable")
    if exclude_row >= 0:
        order = order[order != exclude_row]
    order = order[:k]
    return order.astype(np.int64), dist[order]


def topk_hamming_batch(db, queries, k, exclude_rows):
    n = db.shape[0]
    kk = min(k, n)
    rows = np.full((queries.shape[0], kk), -1, dtype=np.int64)
    dists = np.full((queries.shape[0], kk), -1, dtype=np.int64)
    counts = np.zeros(queries.shape[0], dtype=np.int64)
    for q in range(queries.shape[0]):
        r, d = topk_hamming(db, queries[q], kk, int(exclude_rows[q]))
        rows[q, : len(r)] = r
        dists[q, : len(r)] = d
        counts[q] = len(r)
    return rows, dists, counts


def enumerate_log_mass(mu, sigma):
    """``0.5 * s^T sigma s + mu^T s`` for every s in {0,1}^m.

    State index ``i`` encodes ``s_j = (i >> j) & 1``.
    """
    m = mu.shape[0]
    n = 1 << m
    out = np.empty(n, dtype=np.float64)
    shifts = np.arange(m, dtype=np.int64)
    for start in range(0, n, _ENUM_CHUNK):
        idx = np.arange(start, min(n, start + _ENUM_CHUNK), dtype=np.int64)
        s = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.float64)
        out[start : start + len(idx)] = 0.5 * np.einsum("ni,ij,nj->n", s, sigma, s) + s @ mu
    return out


def mixture_logpmf(states, R):
    """log of the equal-weight Bernoulli mixture at each state.

    ``states`` is (S, m) in {0,1}; ``R`` is (T, k, m) logits.  Returns (T, S)
    with ``log (1/k) sum_j prod_i Bern(s_i; sigmoid(R[t, j, i]))``.
    """
    sp = np.logaddexp(0.0, R).sum(axis=2)  # (T, k)
    ll = np.einsum("tkm,sm->tks", R, states) - sp[:, :, None]
    top = ll.max(axis=1, keepdims=True)
    return (top[:, 0, :] + np.log(np.exp(ll - top).mean(axis=1)))
