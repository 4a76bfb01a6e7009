"""Inner loop for block-adaptive SGD segments.

Block runs cover millions of sequential steps with a full-loss evaluation at
every one, so the segment loop is compiled with numba when available. The
plain-Python implementation below is the reference; the compiled twin must
follow the identical operation order (a test cross-checks them).

Scores ``z = X @ w`` are maintained incrementally through a precomputed Gram
matrix: a step along row j shifts z by ``alpha * G[:, j]``, turning the
per-step full-loss scan into O(n) instead of O(n d).
"""

from __future__ import annotations

import math

import numpy as np


def _block_segment_impl(x, y, gram, w, z, idx, eps_cap, eps_hit, check_hit,
                        loss_in, rec_every, base_t, rec_t, rec_loss, rec_eta,
                        rec_gn, rec_wn, rec_pos):
    """Run one block segment in place.

    ``w`` and ``z`` are mutated; ``loss_in`` is the full loss of the incoming
    iterate. Returns (min post-step loss, hit index, rec_pos, outgoing loss).
    The hit index is the absolute iteration t of the first post-step iterate
    with full loss <= eps_hit (checked only when ``check_hit``), or -1. A row
    (t, loss of w_t, step size used at t, sampled gradient norm, ||w_t||) is
    appended to the rec_* arrays for every t divisible by ``rec_every``.
    """
    n, d = x.shape
    steps = idx.shape[0]
    min_loss = np.inf
    hit = -1
    loss = loss_in
    for s in range(steps):
        j = idx[s]
        m_j = y[j] * z[j]
        if m_j >= 0.0:
            q = math.exp(-m_j)
            loss_j = math.log1p(q)
            sig = q / (1.0 + q)
        else:
            loss_j = -m_j + math.log1p(math.exp(m_j))
            sig = 1.0 / (1.0 + math.exp(m_j))
        denom = eps_cap if loss_j < eps_cap else loss_j
        eta = 1.0 / denom
        t_abs = base_t + s
        if t_abs % rec_every == 0 and rec_pos < rec_t.shape[0]:
            rec_t[rec_pos] = t_abs
            rec_loss[rec_pos] = loss
            rec_eta[rec_pos] = eta
            rec_gn[rec_pos] = sig * math.sqrt(float(np.dot(x[j], x[j])))
            rec_wn[rec_pos] = math.sqrt(float(np.dot(w, w)))
            rec_pos += 1
        alpha = eta * sig * y[j]
        for c in range(d):
            w[c] += alpha * x[j, c]
        for i in range(n):
            z[i] += alpha * gram[i, j]

        acc = 0.0
        for i in range(n):
            m_i = y[i] * z[i]
            if m_i >= 0.0:
                acc += math.log1p(math.exp(-m_i))
            else:
                acc += -m_i + math.log1p(math.exp(m_i))
        loss = acc / n
        if loss < min_loss:
            min_loss = loss
        if check_hit and hit < 0 and loss <= eps_hit:
            hit = t_abs + 1
    return min_loss, hit, rec_pos, loss


try:
    import numba

    block_segment = numba.njit(cache=True)(_block_segment_impl)
except ImportError:  # pragma: no cover - numba is a declared dependency
    block_segment = _block_segment_impl
