"""Compiled dynamic-programming kernels.

All arrays are float64 log-probabilities; ``-inf`` marks an impossible arc.
"""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf

SUB, INS, DEL = 0, 1, 2


@njit(cache=True)
def logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def ctc_forward(log_probs, labels, blank):
    """Log-probability of ``labels`` under a CTC emission matrix (T, V+1)."""
    num_frames = log_probs.shape[0]
    n = labels.shape[0]
    size = 2 * n + 1
    ext = np.full(size, blank, dtype=np.int64)
    for i in range(n):
        ext[2 * i + 1] = labels[i]

    alpha = np.full(size, NEG_INF)
    alpha[0] = log_probs[0, blank]
    if size > 1:
        alpha[1] = log_probs[0, ext[1]]
    prev = np.empty(size)
    for t in range(1, num_frames):
        prev[:] = alpha
        for s in range(size):
            acc = prev[s]
            if s >= 1:
                acc = logaddexp(acc, prev[s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                acc = logaddexp(acc, prev[s - 2])
            if acc == NEG_INF:
                alpha[s] = NEG_INF
            else:
                alpha[s] = acc + log_probs[t, ext[s]]
    if size == 1:
        return alpha[0]
    return logaddexp(alpha[size - 1], alpha[size - 2])


@njit(cache=True)
def edit_forward(log_emit, log_ops, h, y, end_row, eos):
    """Forward table of the monotonic edit-op transducer.

    ``alpha[j, i]`` is the log mass of reaching the cell where ``j`` phonemes
    have been consumed and ``i`` graphemes emitted.  Returns ``(logZ, alpha)``.
    """
    n = h.shape[0]
    length = y.shape[0]
    alpha = np.full((n + 1, length + 1), NEG_INF)
    alpha[0, 0] = 0.0
    for i in range(length + 1):
        for j in range(n + 1):
            a = alpha[j, i]
            if a == NEG_INF:
                continue
            if j < n:
                row = h[j]
                if i < length:
                    e = log_emit[row, y[i]]
                    alpha[j + 1, i + 1] = logaddexp(alpha[j + 1, i + 1], a + log_ops[SUB] + e)
                    alpha[j, i + 1] = logaddexp(alpha[j, i + 1], a + log_ops[INS] + e)
                alpha[j + 1, i] = logaddexp(alpha[j + 1, i], a + log_ops[DEL])
            elif i < length:
                alpha[n, i + 1] = logaddexp(alpha[n, i + 1], a + log_emit[end_row, y[i]])
    log_z = alpha[n, length] + log_emit[end_row, eos]
    return log_z, alpha


@njit(cache=True)
def edit_backward(log_emit, log_ops, h, y, end_row, eos):
    n = h.shape[0]
    length = y.shape[0]
    beta = np.full((n + 1, length + 1), NEG_INF)
    beta[n, length] = log_emit[end_row, eos]
    for i in range(length, -1, -1):
        for j in range(n, -1, -1):
            if j == n:
                if i < length:
                    beta[n, i] = log_emit[end_row, y[i]] + beta[n, i + 1]
                continue
            row = h[j]
            acc = log_ops[DEL] + beta[j + 1, i]
            if i < length:
                e = log_emit[row, y[i]]
                acc = logaddexp(acc, log_ops[SUB] + e + beta[j + 1, i + 1])
                acc = logaddexp(acc, log_ops[INS] + e + beta[j, i + 1])
            beta[j, i] = acc
    return beta


@njit(cache=True)
def edit_counts(log_emit, log_ops, h, y, end_row, eos):
    """Expected arc counts under the posterior over edit paths.

    Returns ``(logZ, emit_counts, op_counts)``; emit counts are indexed like
    ``log_emit`` and include the terminal insert/end arcs on ``end_row``.
    """
    n = h.shape[0]
    length = y.shape[0]
    log_z, alpha = edit_forward(log_emit, log_ops, h, y, end_row, eos)
    emit_counts = np.zeros(log_emit.shape)
    op_counts = np.zeros(3)
    if log_z == NEG_INF:
        return log_z, emit_counts, op_counts
    beta = edit_backward(log_emit, log_ops, h, y, end_row, eos)
    for i in range(length + 1):
        for j in range(n + 1):
            a = alpha[j, i]
            if a == NEG_INF:
                continue
            if j < n:
                row = h[j]
                if i < length:
                    e = log_emit[row, y[i]]
                    p_sub = math.exp(a + log_ops[SUB] + e + beta[j + 1, i + 1] - log_z)
                    p_ins = math.exp(a + log_ops[INS] + e + beta[j, i + 1] - log_z)
                    op_counts[SUB] += p_sub
                    op_counts[INS] += p_ins
                    emit_counts[row, y[i]] += p_sub + p_ins
                op_counts[DEL] += math.exp(a + log_ops[DEL] + beta[j + 1, i] - log_z)
            elif i < length:
                p = math.exp(a + log_emit[end_row, y[i]] + beta[n, i + 1] - log_z)
                emit_counts[end_row, y[i]] += p
    emit_counts[end_row, eos] += 1.0
    return log_z, emit_counts, op_counts
